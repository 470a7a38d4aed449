//! FoodEx2 code strings: parse, canonicalize, validate, serialize.
//!
//! Grammar: `BASE [ "#" GROUP ("$" GROUP)* ]` where GROUP is `CAT "." CODE`.
//! Example: `A000A#F04.A032J$F28.A07GV`. Parsed codes are canonical: facet groups
//! sorted by (category, descriptor) and deduplicated, so set-equality of facets is
//! string equality of serialized codes.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::taxonomy::{FacetCategoryId, HierarchyId, Taxonomy, TermCode};

/// One facet assignment: a category plus a descriptor from that category.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FacetGroup {
    pub category: FacetCategoryId,
    pub descriptor: TermCode,
}

impl fmt::Display for FacetGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.category, self.descriptor)
    }
}

/// A full FoodEx2 code: exactly one base term, any number of facet groups.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FoodCode {
    pub base_term: TermCode,
    /// Canonical order: ascending (category, descriptor), no duplicates.
    pub facets: Vec<FacetGroup>,
}

impl FoodCode {
    pub fn new(base_term: TermCode, mut facets: Vec<FacetGroup>) -> Self {
        facets.sort();
        facets.dedup();
        FoodCode { base_term, facets }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("empty input")]
    EmptyInput,
    #[error("bad base code {0:?}")]
    BadBaseCode(String),
    #[error("bad facet group {text:?} at offset {offset}: {reason}")]
    BadGroupSyntax {
        text: String,
        offset: usize,
        reason: String,
    },
    #[error("unknown separator {separator:?} at offset {offset}")]
    UnknownSeparator { separator: char, offset: usize },
    #[error("duplicate facet group {0} (strict mode rejects duplicates)")]
    DuplicateGroup(FacetGroup),
}

/// Parsing behavior knobs.
#[derive(Debug, Clone, Copy)]
pub struct CodecOptions {
    /// Separator between category and descriptor within a group. FoodEx2 uses ".".
    pub group_separator: char,
    /// Lenient mode uppercases the input and deduplicates repeated groups instead
    /// of rejecting them, mirroring how raw dataset exports are cleaned. All other
    /// corruption is still rejected. Strict mode is for catalog-grade data.
    pub lenient: bool,
}

impl Default for CodecOptions {
    fn default() -> Self {
        CodecOptions {
            group_separator: '.',
            lenient: false,
        }
    }
}

impl CodecOptions {
    pub fn lenient() -> Self {
        CodecOptions {
            lenient: true,
            ..CodecOptions::default()
        }
    }
}

/// Strict parse with default options.
pub fn parse_code(text: &str) -> Result<FoodCode, CodecError> {
    parse_code_with(text, CodecOptions::default())
}

pub fn parse_code_with(text: &str, opts: CodecOptions) -> Result<FoodCode, CodecError> {
    let folded;
    let text = if opts.lenient {
        folded = text.trim().to_ascii_uppercase();
        folded.as_str()
    } else {
        text
    };
    if text.is_empty() {
        return Err(CodecError::EmptyInput);
    }

    let (base, groups_text) = match text.split_once('#') {
        None => (text, None),
        Some((b, rest)) => (b, Some(rest)),
    };
    // A '$' before the '#' (or with no '#' at all) is a group separator outside
    // any group list; surface it as such rather than as a bad base code.
    if let Some(pos) = base.find('$') {
        return Err(CodecError::UnknownSeparator {
            separator: '$',
            offset: pos,
        });
    }
    let base_term: TermCode = base
        .parse()
        .map_err(|_| CodecError::BadBaseCode(base.to_owned()))?;

    let mut facets: Vec<FacetGroup> = Vec::new();
    if let Some(groups_text) = groups_text {
        // Offset of the first group: base length + 1 for '#'.
        let mut offset = base.len() + 1;
        for group in groups_text.split('$') {
            let group_err = |reason: String| CodecError::BadGroupSyntax {
                text: group.to_owned(),
                offset,
                reason,
            };
            if let Some(pos) = group.find('#') {
                return Err(CodecError::UnknownSeparator {
                    separator: '#',
                    offset: offset + pos,
                });
            }
            let (cat, desc) = group
                .split_once(opts.group_separator)
                .ok_or_else(|| group_err(format!("missing {:?} separator", opts.group_separator)))?;
            let category: FacetCategoryId = cat
                .parse()
                .map_err(|_| group_err(format!("bad category {cat:?}")))?;
            let descriptor: TermCode = desc
                .parse()
                .map_err(|_| group_err(format!("bad descriptor {desc:?}")))?;
            let parsed = FacetGroup {
                category,
                descriptor,
            };
            if facets.contains(&parsed) && !opts.lenient {
                return Err(CodecError::DuplicateGroup(parsed));
            }
            facets.push(parsed);
            offset += group.len() + 1;
        }
    }

    Ok(FoodCode::new(base_term, facets))
}

/// Inverse of [`parse_code`] on canonical values. Facet-free codes serialize as
/// the bare base term; groups are prefixed by `#` and joined with `$`.
pub fn serialize_code(code: &FoodCode) -> String {
    serialize_code_with(code, CodecOptions::default())
}

pub fn serialize_code_with(code: &FoodCode, opts: CodecOptions) -> String {
    let mut out = code.base_term.to_string();
    for (i, g) in code.facets.iter().enumerate() {
        out.push(if i == 0 { '#' } else { '$' });
        out.push_str(&g.category.to_string());
        out.push(opts.group_separator);
        out.push_str(g.descriptor.as_str());
    }
    out
}

impl FromStr for FoodCode {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_code(s)
    }
}

impl fmt::Display for FoodCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_code(self))
    }
}

/// One referential problem found by [`validate_code`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownBaseTerm(TermCode),
    UnknownCategory(FacetCategoryId),
    /// The category exists but does not contain this descriptor.
    DescriptorOutsideCategory(FacetCategoryId, TermCode),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownBaseTerm(t) => write!(f, "base term {t} not in catalog"),
            Violation::UnknownCategory(c) => write!(f, "facet category {c} not in catalog"),
            Violation::DescriptorOutsideCategory(c, d) => {
                write!(f, "descriptor {d} is not in category {c}")
            }
        }
    }
}

/// Checks a parsed code against a loaded catalog. Report-style: structural
/// syntax is already guaranteed by parsing, so this only lists referential
/// violations; an empty report means the code is fully resolvable.
pub fn validate_code(code: &FoodCode, tx: &Taxonomy) -> Vec<Violation> {
    let mut violations = Vec::new();
    let base = tx
        .hierarchy(HierarchyId::Base)
        .is_some_and(|h| h.contains(&code.base_term));
    if !base {
        violations.push(Violation::UnknownBaseTerm(code.base_term.clone()));
    }
    for g in &code.facets {
        match tx.hierarchy(HierarchyId::Facet(g.category)) {
            None => violations.push(Violation::UnknownCategory(g.category)),
            Some(h) => {
                if !h.contains(&g.descriptor) {
                    violations.push(Violation::DescriptorOutsideCategory(
                        g.category,
                        g.descriptor.clone(),
                    ));
                }
            }
        }
    }
    violations
}
