//! FoodEx2 catalog as a forest of rooted hierarchies: one base-term hierarchy plus
//! one hierarchy per facet category, loaded from a flat tab-separated schema.
//! Answers the structural queries the rest of the pipeline is built on: parent,
//! depth, siblings, lowest common ancestor, hop distance, implicit facets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::fnv1a64;

/// Five-character FoodEx2 term code such as `A032J`.
///
/// The same code may appear in several hierarchies (a term like white sugar is
/// both a base term and an F04 ingredient descriptor); uniqueness holds per
/// hierarchy, not globally.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TermCode(String);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("term code {0:?} does not match [A-Z][0-9A-Z]{{4}}")]
pub struct InvalidTermCode(pub String);

impl TermCode {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for TermCode {
    type Err = InvalidTermCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.as_bytes();
        let ok = b.len() == 5
            && b[0].is_ascii_uppercase()
            && b[1..]
                .iter()
                .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit());
        if ok {
            Ok(TermCode(s.to_owned()))
        } else {
            Err(InvalidTermCode(s.to_owned()))
        }
    }
}

impl fmt::Display for TermCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One of the 28 facet categories, `F01` through `F28`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FacetCategoryId(u8);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("facet category {0:?} is not one of F01..F28")]
pub struct InvalidFacetCategory(pub String);

impl FacetCategoryId {
    pub const COUNT: usize = 28;

    pub fn new(number: u8) -> Option<Self> {
        (1..=Self::COUNT as u8).contains(&number).then_some(Self(number))
    }

    pub fn number(self) -> u8 {
        self.0
    }

    /// Zero-based position, for indexing fixed 28-slot arrays (e.g. logit vectors).
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Option<Self> {
        (index < Self::COUNT).then(|| Self(index as u8 + 1))
    }

    pub fn all() -> impl Iterator<Item = FacetCategoryId> {
        (1..=Self::COUNT as u8).map(FacetCategoryId)
    }
}

impl FromStr for FacetCategoryId {
    type Err = InvalidFacetCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || InvalidFacetCategory(s.to_owned());
        let digits = s.strip_prefix('F').ok_or_else(err)?;
        if digits.len() != 2 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let number: u8 = digits.parse().map_err(|_| err())?;
        FacetCategoryId::new(number).ok_or_else(err)
    }
}

impl fmt::Display for FacetCategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{:02}", self.0)
    }
}

/// Identifies one tree of the catalog forest: the base-term hierarchy or a
/// facet-category descriptor hierarchy. `Base` orders before every facet id,
/// which makes it the preferred resolution when a code appears in several trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HierarchyId {
    Base,
    Facet(FacetCategoryId),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("hierarchy {0:?} is neither BASE nor F01..F28")]
pub struct InvalidHierarchyId(pub String);

impl FromStr for HierarchyId {
    type Err = InvalidHierarchyId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "BASE" {
            return Ok(HierarchyId::Base);
        }
        s.parse::<FacetCategoryId>()
            .map(HierarchyId::Facet)
            .map_err(|_| InvalidHierarchyId(s.to_owned()))
    }
}

impl fmt::Display for HierarchyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HierarchyId::Base => f.write_str("BASE"),
            HierarchyId::Facet(c) => c.fmt(f),
        }
    }
}

/// One catalog term inside one hierarchy.
#[derive(Debug, Clone)]
pub struct TaxonomyNode {
    pub code: TermCode,
    pub name: String,
    pub hierarchy: HierarchyId,
    pub parent: Option<TermCode>,
    /// Root depth is 0; every child is one deeper than its parent.
    pub depth: u32,
    /// Implicit facets attached to this term in the catalog.
    pub implicit_facets: BTreeSet<(FacetCategoryId, TermCode)>,
    pub description: String,
}

/// Facet-category metadata collected from the loaded catalog.
#[derive(Debug, Clone)]
pub struct FacetCategory {
    pub id: FacetCategoryId,
    /// Name of the category hierarchy's root node.
    pub name: String,
    /// Number of descriptors (non-root nodes) in the category hierarchy.
    pub descriptor_count: usize,
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("catalog line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("catalog line {line}: parent chain of {code} in {hierarchy} is cyclic")]
    CycleDetected {
        code: TermCode,
        hierarchy: HierarchyId,
        line: usize,
    },
    #[error("catalog line {line}: {code} names parent {parent} absent from {hierarchy}")]
    DanglingParent {
        code: TermCode,
        parent: TermCode,
        hierarchy: HierarchyId,
        line: usize,
    },
    #[error(
        "catalog line {line}: {code} carries implicit facet {category}.{descriptor}, \
         but {category} has no descriptor {descriptor}"
    )]
    DanglingImplicitFacet {
        code: TermCode,
        category: FacetCategoryId,
        descriptor: TermCode,
        line: usize,
    },
    #[error("unknown code {0}")]
    UnknownCode(TermCode),
    #[error("{t} and {v} share no hierarchy")]
    DifferentHierarchies { t: TermCode, v: TermCode },
    #[error("reading catalog: {0}")]
    Io(#[from] std::io::Error),
}

/// A single rooted tree of the catalog. Nodes keep their catalog order.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    id: HierarchyId,
    nodes: Vec<TaxonomyNode>,
    index: HashMap<TermCode, usize>,
    parent_idx: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    root: usize,
}

impl Hierarchy {
    pub fn id(&self) -> HierarchyId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &TaxonomyNode {
        &self.nodes[self.root]
    }

    /// Nodes in catalog order.
    pub fn nodes(&self) -> &[TaxonomyNode] {
        &self.nodes
    }

    pub fn node(&self, code: &TermCode) -> Option<&TaxonomyNode> {
        self.index.get(code).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, code: &TermCode) -> bool {
        self.index.contains_key(code)
    }

    /// Strict ancestors of `code`, parent first, root last.
    pub fn ancestors(&self, code: &TermCode) -> Option<Vec<&TermCode>> {
        let mut i = *self.index.get(code)?;
        let mut out = Vec::new();
        while let Some(p) = self.parent_idx[i] {
            out.push(&self.nodes[p].code);
            i = p;
        }
        Some(out)
    }

    /// Node names on the root-to-`code` path, both ends included.
    pub fn path_names(&self, code: &TermCode) -> Option<Vec<&str>> {
        let mut i = *self.index.get(code)?;
        let mut out = vec![self.nodes[i].name.as_str()];
        while let Some(p) = self.parent_idx[i] {
            out.push(self.nodes[p].name.as_str());
            i = p;
        }
        out.reverse();
        Some(out)
    }

    /// Retrieval context for a node: name, description (when present), and the
    /// root-to-node path names, all joined with " / ". Catalog fields come from a
    /// tab-separated file, so the result is always a single line.
    pub fn context_text(&self, code: &TermCode) -> Option<String> {
        let node = self.node(code)?;
        let mut parts: Vec<&str> = vec![&node.name];
        if !node.description.is_empty() {
            parts.push(&node.description);
        }
        let path = self.path_names(code)?;
        parts.extend(path);
        Some(parts.join(" / "))
    }

    fn lca_idx(&self, mut a: usize, mut b: usize) -> usize {
        while self.nodes[a].depth > self.nodes[b].depth {
            a = self.parent_idx[a].expect("non-root has a parent");
        }
        while self.nodes[b].depth > self.nodes[a].depth {
            b = self.parent_idx[b].expect("non-root has a parent");
        }
        while a != b {
            a = self.parent_idx[a].expect("walk meets at the root");
            b = self.parent_idx[b].expect("walk meets at the root");
        }
        a
    }

    fn siblings_idx(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let sibs: &[usize] = match self.parent_idx[i] {
            Some(p) => &self.children[p],
            None => &[],
        };
        sibs.iter().copied().filter(move |&s| s != i)
    }
}

/// The full loaded catalog: every hierarchy plus the facet-category registry.
/// Immutable after load; all queries are read-only.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    hierarchies: BTreeMap<HierarchyId, Hierarchy>,
    /// Hierarchies containing each code, ascending by id (so BASE wins resolution).
    by_code: HashMap<TermCode, Vec<HierarchyId>>,
    categories: Vec<FacetCategory>,
    content_hash: u64,
}

pub const CATALOG_HEADER: &str = "code\tname\thierarchy\tparent_code\timplicit_facets\tdescription";

/// Loads a catalog file. See [`Taxonomy::from_catalog_str`] for the schema.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
    let text = std::fs::read_to_string(path)?;
    Taxonomy::from_catalog_str(&text)
}

struct RawRecord {
    line: usize,
    code: TermCode,
    name: String,
    parent: Option<TermCode>,
    implicit_facets: BTreeSet<(FacetCategoryId, TermCode)>,
    description: String,
}

impl Taxonomy {
    /// Parses the flat catalog schema: a header line, then one record per line with
    /// tab-separated fields `code, name, hierarchy, parent_code, implicit_facets,
    /// description`. `parent_code` is empty for roots; `implicit_facets` is a
    /// semicolon-separated list of `CAT.CODE` pairs and may be empty.
    pub fn from_catalog_str(text: &str) -> Result<Taxonomy, TaxonomyError> {
        let content_hash = fnv1a64(text.as_bytes());
        let malformed = |line: usize, reason: String| TaxonomyError::MalformedRecord { line, reason };

        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        match lines.next() {
            Some((_, header)) if header == CATALOG_HEADER => {}
            Some((line, header)) => {
                return Err(malformed(
                    line,
                    format!("expected header {CATALOG_HEADER:?}, got {header:?}"),
                ))
            }
            None => return Err(malformed(1, "empty catalog, header line required".into())),
        }

        let mut grouped: BTreeMap<HierarchyId, Vec<RawRecord>> = BTreeMap::new();
        for (line, raw) in lines {
            if raw.is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 6 {
                return Err(malformed(
                    line,
                    format!("expected 6 tab-separated fields, got {}", fields.len()),
                ));
            }
            let code: TermCode = fields[0]
                .parse()
                .map_err(|e: InvalidTermCode| malformed(line, e.to_string()))?;
            let hierarchy: HierarchyId = fields[2]
                .parse()
                .map_err(|e: InvalidHierarchyId| malformed(line, e.to_string()))?;
            let parent = match fields[3] {
                "" => None,
                p => Some(
                    p.parse::<TermCode>()
                        .map_err(|e| malformed(line, e.to_string()))?,
                ),
            };
            let mut implicit_facets = BTreeSet::new();
            for pair in fields[4].split(';').filter(|p| !p.is_empty()) {
                let (cat, desc) = pair.split_once('.').ok_or_else(|| {
                    malformed(line, format!("implicit facet {pair:?} is not CAT.CODE"))
                })?;
                let cat: FacetCategoryId =
                    cat.parse().map_err(|e: InvalidFacetCategory| malformed(line, e.to_string()))?;
                let desc: TermCode =
                    desc.parse().map_err(|e: InvalidTermCode| malformed(line, e.to_string()))?;
                implicit_facets.insert((cat, desc));
            }
            grouped.entry(hierarchy).or_default().push(RawRecord {
                line,
                code,
                name: fields[1].to_owned(),
                parent,
                implicit_facets,
                description: fields[5].to_owned(),
            });
        }

        // Skeleton pass: per-hierarchy indexes, parent links, depths.
        let mut skeletons: BTreeMap<HierarchyId, (Vec<RawRecord>, HashMap<TermCode, usize>, Vec<Option<usize>>, Vec<u32>)> =
            BTreeMap::new();
        for (id, records) in grouped {
            let mut index: HashMap<TermCode, usize> = HashMap::with_capacity(records.len());
            for (i, rec) in records.iter().enumerate() {
                if index.insert(rec.code.clone(), i).is_some() {
                    return Err(malformed(
                        rec.line,
                        format!("duplicate code {} in hierarchy {}", rec.code, id),
                    ));
                }
            }
            let mut parent_idx: Vec<Option<usize>> = Vec::with_capacity(records.len());
            for rec in &records {
                match &rec.parent {
                    None => parent_idx.push(None),
                    Some(p) => match index.get(p) {
                        Some(&pi) => parent_idx.push(Some(pi)),
                        None => {
                            return Err(TaxonomyError::DanglingParent {
                                code: rec.code.clone(),
                                parent: p.clone(),
                                hierarchy: id,
                                line: rec.line,
                            })
                        }
                    },
                }
            }

            // Depths with cycle detection: walk each parent chain, then unwind.
            // 0 = fresh, 1 = on the current chain, 2 = resolved.
            let mut state = vec![0u8; records.len()];
            let mut depth = vec![0u32; records.len()];
            for start in 0..records.len() {
                let mut chain = Vec::new();
                let mut cur = start;
                loop {
                    match state[cur] {
                        2 => break,
                        1 => {
                            return Err(TaxonomyError::CycleDetected {
                                code: records[cur].code.clone(),
                                hierarchy: id,
                                line: records[cur].line,
                            })
                        }
                        _ => {
                            state[cur] = 1;
                            chain.push(cur);
                            match parent_idx[cur] {
                                Some(p) => cur = p,
                                None => break,
                            }
                        }
                    }
                }
                while let Some(i) = chain.pop() {
                    depth[i] = match parent_idx[i] {
                        None => 0,
                        Some(p) => depth[p] + 1,
                    };
                    state[i] = 2;
                }
            }

            // A finite acyclic parent forest has at least one root; more than one
            // breaks the single-tree invariant.
            let mut roots = (0..records.len()).filter(|&i| parent_idx[i].is_none());
            let first = roots.next().expect("acyclic hierarchy has a root");
            if let Some(second) = roots.next() {
                return Err(malformed(
                    records[second].line,
                    format!(
                        "hierarchy {} has a second root {} (first is {})",
                        id, records[second].code, records[first].code
                    ),
                ));
            }

            skeletons.insert(id, (records, index, parent_idx, depth));
        }

        // Referential pass: every implicit facet must name an existing descriptor.
        for (_, (records, _, _, _)) in &skeletons {
            for rec in records {
                for (cat, desc) in &rec.implicit_facets {
                    let resolves = skeletons
                        .get(&HierarchyId::Facet(*cat))
                        .is_some_and(|(_, idx, _, _)| idx.contains_key(desc));
                    if !resolves {
                        return Err(TaxonomyError::DanglingImplicitFacet {
                            code: rec.code.clone(),
                            category: *cat,
                            descriptor: desc.clone(),
                            line: rec.line,
                        });
                    }
                }
            }
        }

        // Assembly.
        let mut hierarchies = BTreeMap::new();
        let mut by_code: HashMap<TermCode, Vec<HierarchyId>> = HashMap::new();
        let mut categories = Vec::new();
        for (id, (records, index, parent_idx, depth)) in skeletons {
            let mut children: Vec<Vec<usize>> = vec![Vec::new(); records.len()];
            let mut root = 0;
            for (i, p) in parent_idx.iter().enumerate() {
                match p {
                    Some(p) => children[*p].push(i),
                    None => root = i,
                }
            }
            let codes: Vec<TermCode> = records.iter().map(|r| r.code.clone()).collect();
            let nodes: Vec<TaxonomyNode> = records
                .into_iter()
                .enumerate()
                .map(|(i, rec)| TaxonomyNode {
                    code: rec.code,
                    name: rec.name,
                    hierarchy: id,
                    parent: parent_idx[i].map(|p| codes[p].clone()),
                    depth: depth[i],
                    implicit_facets: rec.implicit_facets,
                    description: rec.description,
                })
                .collect();
            for node in &nodes {
                by_code.entry(node.code.clone()).or_default().push(id);
            }
            if let HierarchyId::Facet(cat) = id {
                categories.push(FacetCategory {
                    id: cat,
                    name: nodes[root].name.clone(),
                    descriptor_count: nodes.len() - 1,
                });
            }
            hierarchies.insert(
                id,
                Hierarchy {
                    id,
                    nodes,
                    index,
                    parent_idx,
                    children,
                    root,
                },
            );
        }
        // BTreeMap iteration already visits ids ascending, so each by_code list is
        // sorted and resolution can take the first entry.

        Ok(Taxonomy {
            hierarchies,
            by_code,
            categories,
            content_hash,
        })
    }

    /// FNV-1a hash of the catalog file bytes; used to key on-disk index caches.
    pub fn content_hash(&self) -> u64 {
        self.content_hash
    }

    pub fn hierarchy(&self, id: HierarchyId) -> Option<&Hierarchy> {
        self.hierarchies.get(&id)
    }

    pub fn hierarchies(&self) -> impl Iterator<Item = &Hierarchy> {
        self.hierarchies.values()
    }

    /// Facet categories present in the catalog, ascending by id.
    pub fn categories(&self) -> &[FacetCategory] {
        &self.categories
    }

    pub fn category(&self, id: FacetCategoryId) -> Option<&FacetCategory> {
        self.categories.iter().find(|c| c.id == id)
    }

    /// Resolves a code to its node. A code living in several hierarchies resolves
    /// to the smallest hierarchy id, so base terms win over facet descriptors.
    pub fn node(&self, code: &TermCode) -> Result<&TaxonomyNode, TaxonomyError> {
        let (h, i) = self.resolve(code)?;
        Ok(&h.nodes[i])
    }

    /// Node lookup scoped to one hierarchy, for codes that are ambiguous globally.
    pub fn node_in(&self, id: HierarchyId, code: &TermCode) -> Option<&TaxonomyNode> {
        self.hierarchies.get(&id)?.node(code)
    }

    /// Lowest common ancestor: the deepest node that is an ancestor-or-self of
    /// both. Resolved in the smallest hierarchy containing both codes.
    pub fn lca(&self, t: &TermCode, v: &TermCode) -> Result<TermCode, TaxonomyError> {
        let h = self.common_hierarchy(t, v)?;
        let z = h.lca_idx(h.index[t], h.index[v]);
        Ok(h.nodes[z].code.clone())
    }

    /// Tree distance through the LCA: |dp(t) − dp(z)| + |dp(v) − dp(z)|. On a tree
    /// this equals the undirected shortest-path length.
    pub fn hop_distance(&self, t: &TermCode, v: &TermCode) -> Result<u32, TaxonomyError> {
        let h = self.common_hierarchy(t, v)?;
        let (a, b) = (h.index[t], h.index[v]);
        let z = h.lca_idx(a, b);
        Ok(h.nodes[a].depth - h.nodes[z].depth + h.nodes[b].depth - h.nodes[z].depth)
    }

    /// The other children of `t`'s parent. Roots have no siblings.
    pub fn siblings(&self, t: &TermCode) -> Result<BTreeSet<TermCode>, TaxonomyError> {
        let (h, i) = self.resolve(t)?;
        Ok(h.siblings_idx(i).map(|s| h.nodes[s].code.clone()).collect())
    }

    /// The stored implicit-facet set of `t`; empty for most terms.
    pub fn implicit_facets(
        &self,
        t: &TermCode,
    ) -> Result<&BTreeSet<(FacetCategoryId, TermCode)>, TaxonomyError> {
        let (h, i) = self.resolve(t)?;
        Ok(&h.nodes[i].implicit_facets)
    }

    /// Serializes back to the flat catalog schema, hierarchy by hierarchy in id
    /// order, nodes in catalog order.
    pub fn to_catalog_string(&self) -> String {
        let mut out = String::from(CATALOG_HEADER);
        out.push('\n');
        for h in self.hierarchies.values() {
            for node in &h.nodes {
                let implicit = node
                    .implicit_facets
                    .iter()
                    .map(|(c, d)| format!("{c}.{d}"))
                    .collect::<Vec<_>>()
                    .join(";");
                let parent = node.parent.as_ref().map(TermCode::as_str).unwrap_or("");
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    node.code, node.name, node.hierarchy, parent, implicit, node.description
                ));
            }
        }
        out
    }

    fn resolve(&self, code: &TermCode) -> Result<(&Hierarchy, usize), TaxonomyError> {
        let ids = self
            .by_code
            .get(code)
            .ok_or_else(|| TaxonomyError::UnknownCode(code.clone()))?;
        let h = &self.hierarchies[&ids[0]];
        Ok((h, h.index[code]))
    }

    fn common_hierarchy(&self, t: &TermCode, v: &TermCode) -> Result<&Hierarchy, TaxonomyError> {
        let ht = self
            .by_code
            .get(t)
            .ok_or_else(|| TaxonomyError::UnknownCode(t.clone()))?;
        let hv = self
            .by_code
            .get(v)
            .ok_or_else(|| TaxonomyError::UnknownCode(v.clone()))?;
        for id in ht {
            if hv.contains(id) {
                return Ok(&self.hierarchies[id]);
            }
        }
        Err(TaxonomyError::DifferentHierarchies {
            t: t.clone(),
            v: v.clone(),
        })
    }
}
