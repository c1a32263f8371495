use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};

/// Nesting limit for parsed queries.
pub const MAX_DEPTH: usize = 128;

/// Upper bound on the number of conjunctive branches produced by [`to_dnf`].
pub const MAX_DNF_BRANCHES: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperatorTree {
    Anchor(usize),
    Projection(usize, Box<OperatorTree>),
    Intersection(Vec<OperatorTree>),
    Union(Vec<OperatorTree>),
    Negation(Box<OperatorTree>),
}

impl OperatorTree {
    pub fn anchor(e: usize) -> Self {
        OperatorTree::Anchor(e)
    }

    pub fn project(relation: usize, child: OperatorTree) -> Self {
        OperatorTree::Projection(relation, Box::new(child))
    }

    pub fn negate(child: OperatorTree) -> Self {
        OperatorTree::Negation(Box::new(child))
    }

    pub fn depth(&self) -> usize {
        match self {
            OperatorTree::Anchor(_) => 1,
            OperatorTree::Projection(_, c) | OperatorTree::Negation(c) => 1 + c.depth(),
            OperatorTree::Intersection(cs) | OperatorTree::Union(cs) => {
                1 + cs.iter().map(|c| c.depth()).max().unwrap_or(0)
            }
        }
    }

    pub fn contains_union(&self) -> bool {
        match self {
            OperatorTree::Anchor(_) => false,
            OperatorTree::Union(_) => true,
            OperatorTree::Projection(_, c) | OperatorTree::Negation(c) => c.contains_union(),
            OperatorTree::Intersection(cs) => cs.iter().any(|c| c.contains_union()),
        }
    }

    pub fn contains_negation(&self) -> bool {
        match self {
            OperatorTree::Anchor(_) => false,
            OperatorTree::Negation(_) => true,
            OperatorTree::Projection(_, c) => c.contains_negation(),
            OperatorTree::Intersection(cs) | OperatorTree::Union(cs) => {
                cs.iter().any(|c| c.contains_negation())
            }
        }
    }

    pub fn max_entity(&self) -> Option<usize> {
        match self {
            OperatorTree::Anchor(e) => Some(*e),
            OperatorTree::Projection(_, c) | OperatorTree::Negation(c) => c.max_entity(),
            OperatorTree::Intersection(cs) | OperatorTree::Union(cs) => {
                cs.iter().filter_map(|c| c.max_entity()).max()
            }
        }
    }

    pub fn max_relation(&self) -> Option<usize> {
        match self {
            OperatorTree::Anchor(_) => None,
            OperatorTree::Projection(r, c) => Some(c.max_relation().map_or(*r, |m| m.max(*r))),
            OperatorTree::Negation(c) => c.max_relation(),
            OperatorTree::Intersection(cs) | OperatorTree::Union(cs) => {
                cs.iter().filter_map(|c| c.max_relation()).max()
            }
        }
    }

    /// Errors unless every id fits the given counts.
    pub fn check_ids(&self, entity_count: usize, relation_count: usize) -> Result<()> {
        if let Some(e) = self.max_entity().filter(|&e| e >= entity_count) {
            return Err(WfreError::Lookup(format!(
                "entity {e} out of range ({entity_count} entities)"
            )));
        }
        if let Some(r) = self.max_relation().filter(|&r| r >= relation_count) {
            return Err(WfreError::Lookup(format!(
                "relation {r} out of range ({relation_count} relations)"
            )));
        }
        Ok(())
    }

    /// Shape of the tree with ids erased and commutative children sorted.
    pub fn signature(&self) -> String {
        match self {
            OperatorTree::Anchor(_) => "e".into(),
            OperatorTree::Projection(_, c) => format!("(p {})", c.signature()),
            OperatorTree::Negation(c) => format!("(n {})", c.signature()),
            OperatorTree::Intersection(cs) | OperatorTree::Union(cs) => {
                let mut parts: Vec<String> = cs.iter().map(|c| c.signature()).collect();
                parts.sort();
                let tag = if matches!(self, OperatorTree::Intersection(_)) { "i" } else { "u" };
                format!("({tag} {})", parts.join(" "))
            }
        }
    }
}

impl fmt::Display for OperatorTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorTree::Anchor(e) => write!(f, "(e {e})"),
            OperatorTree::Projection(r, c) => write!(f, "(p {r} {c})"),
            OperatorTree::Negation(c) => write!(f, "(n {c})"),
            OperatorTree::Intersection(cs) | OperatorTree::Union(cs) => {
                let tag = if matches!(self, OperatorTree::Intersection(_)) { 'i' } else { 'u' };
                write!(f, "({tag}")?;
                for c in cs {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl std::str::FromStr for OperatorTree {
    type Err = WfreError;

    fn from_str(s: &str) -> Result<Self> {
        parse_query(s)
    }
}

impl Serialize for OperatorTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OperatorTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_query(&text).map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(WfreError::Syntax {
            offset,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8) -> Result<()> {
        match self.peek() {
            Some(b) if b == byte => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => self.err(self.pos, format!("expected `{}`, found `{}`", byte as char, b as char)),
            None => self.err(self.pos, format!("expected `{}`, found end of input", byte as char)),
        }
    }

    fn word(&mut self) -> (usize, &'a str) {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let b = self.src[self.pos];
            if b.is_ascii_whitespace() || b == b'(' || b == b')' {
                break;
            }
            self.pos += 1;
        }
        // Token boundaries are ASCII, so the slice is valid UTF-8.
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        (start, text)
    }

    fn id(&mut self) -> Result<usize> {
        let (start, text) = self.word();
        if text.is_empty() {
            return match self.src.get(self.pos) {
                None => self.err(start, "expected an id, found end of input"),
                Some(&b) => self.err(start, format!("expected an id, found `{}`", b as char)),
            };
        }
        if !text.bytes().all(|b| b.is_ascii_digit()) {
            return self.err(start, format!("`{text}` is not a non-negative integer id"));
        }
        text.parse::<u32>()
            .map(|v| v as usize)
            .or_else(|_| self.err(start, format!("id `{text}` is too large")))
    }

    fn node(&mut self, depth: usize) -> Result<OperatorTree> {
        if depth > MAX_DEPTH {
            return self.err(self.pos, format!("nesting deeper than {MAX_DEPTH}"));
        }
        self.expect(b'(')?;
        let (tag_at, tag) = self.word();
        let tree = match tag {
            "e" => OperatorTree::Anchor(self.id()?),
            "p" => {
                let r = self.id()?;
                OperatorTree::Projection(r, Box::new(self.node(depth + 1)?))
            }
            "n" => OperatorTree::Negation(Box::new(self.node(depth + 1)?)),
            "i" | "u" => {
                let mut cs = Vec::new();
                while self.peek() == Some(b'(') {
                    cs.push(self.node(depth + 1)?);
                }
                if self.peek().is_none() {
                    return self.err(self.pos, "expected `)`, found end of input");
                }
                if cs.len() < 2 {
                    return self.err(tag_at, format!("`{tag}` needs at least two operands, got {}", cs.len()));
                }
                if tag == "i" {
                    OperatorTree::Intersection(cs)
                } else {
                    OperatorTree::Union(cs)
                }
            }
            "" if self.pos >= self.src.len() => return self.err(tag_at, "expected a tag, found end of input"),
            "" => return self.err(tag_at, "expected a tag"),
            other => return self.err(tag_at, format!("unknown tag `{other}`")),
        };
        self.expect(b')')?;
        Ok(tree)
    }
}

/// Parses the s-expression form: `(e id)`, `(p rel q)`, `(i q q ...)`,
/// `(u q q ...)`, `(n q)`.
pub fn parse_query(text: &str) -> Result<OperatorTree> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let tree = p.node(0)?;
    if p.peek().is_some() {
        return p.err(p.pos, "trailing input after query");
    }
    Ok(tree)
}

pub fn serialize_query(tree: &OperatorTree) -> String {
    tree.to_string()
}

/// Rewrites a query into a list of union-free branches whose answer sets
/// union to the original's.
pub fn to_dnf(tree: &OperatorTree) -> Result<Vec<OperatorTree>> {
    dnf(tree)
}

fn too_many_branches() -> WfreError {
    WfreError::Unsupported(format!(
        "disjunctive form exceeds {MAX_DNF_BRANCHES} branches"
    ))
}

fn dnf(tree: &OperatorTree) -> Result<Vec<OperatorTree>> {
    match tree {
        OperatorTree::Anchor(_) => Ok(vec![tree.clone()]),
        OperatorTree::Projection(r, c) => Ok(dnf(c)?
            .into_iter()
            .map(|b| OperatorTree::project(*r, b))
            .collect()),
        OperatorTree::Negation(c) => {
            if c.contains_union() {
                Err(WfreError::Unsupported(
                    "union under negation has no disjunctive form; use the De Morgan mode".into(),
                ))
            } else {
                Ok(vec![tree.clone()])
            }
        }
        OperatorTree::Union(cs) => {
            let mut out = Vec::new();
            for c in cs {
                out.extend(dnf(c)?);
                if out.len() > MAX_DNF_BRANCHES {
                    return Err(too_many_branches());
                }
            }
            Ok(out)
        }
        OperatorTree::Intersection(cs) => {
            let mut combos: Vec<Vec<OperatorTree>> = vec![Vec::new()];
            for c in cs {
                let branches = dnf(c)?;
                if combos.len().saturating_mul(branches.len()) > MAX_DNF_BRANCHES {
                    return Err(too_many_branches());
                }
                combos = combos
                    .iter()
                    .flat_map(|prefix| {
                        branches.iter().map(move |b| {
                            let mut next = prefix.clone();
                            next.push(b.clone());
                            next
                        })
                    })
                    .collect();
            }
            Ok(combos.into_iter().map(OperatorTree::Intersection).collect())
        }
    }
}

/// Replaces every `Union(c1..ck)` by `Negation(Intersection(Negation(c1)..Negation(ck)))`.
pub fn apply_de_morgan(tree: &OperatorTree) -> OperatorTree {
    match tree {
        OperatorTree::Anchor(_) => tree.clone(),
        OperatorTree::Projection(r, c) => OperatorTree::project(*r, apply_de_morgan(c)),
        OperatorTree::Negation(c) => OperatorTree::negate(apply_de_morgan(c)),
        OperatorTree::Intersection(cs) => {
            OperatorTree::Intersection(cs.iter().map(apply_de_morgan).collect())
        }
        OperatorTree::Union(cs) => OperatorTree::negate(OperatorTree::Intersection(
            cs.iter()
                .map(|c| OperatorTree::negate(apply_de_morgan(c)))
                .collect(),
        )),
    }
}

/// The fourteen standard query shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryType {
    #[serde(rename = "1p")]
    P1,
    #[serde(rename = "2p")]
    P2,
    #[serde(rename = "3p")]
    P3,
    #[serde(rename = "2i")]
    I2,
    #[serde(rename = "3i")]
    I3,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "2u")]
    U2,
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "2in")]
    In2,
    #[serde(rename = "3in")]
    In3,
    #[serde(rename = "inp")]
    Inp,
    #[serde(rename = "pin")]
    Pin,
    #[serde(rename = "pni")]
    Pni,
}

impl QueryType {
    pub const ALL: [QueryType; 14] = [
        QueryType::P1,
        QueryType::P2,
        QueryType::P3,
        QueryType::I2,
        QueryType::I3,
        QueryType::Pi,
        QueryType::Ip,
        QueryType::U2,
        QueryType::Up,
        QueryType::In2,
        QueryType::In3,
        QueryType::Inp,
        QueryType::Pin,
        QueryType::Pni,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QueryType::P1 => "1p",
            QueryType::P2 => "2p",
            QueryType::P3 => "3p",
            QueryType::I2 => "2i",
            QueryType::I3 => "3i",
            QueryType::Pi => "pi",
            QueryType::Ip => "ip",
            QueryType::U2 => "2u",
            QueryType::Up => "up",
            QueryType::In2 => "2in",
            QueryType::In3 => "3in",
            QueryType::Inp => "inp",
            QueryType::Pin => "pin",
            QueryType::Pni => "pni",
        }
    }

    /// Skeleton with every id set to zero.
    pub fn template(self) -> OperatorTree {
        let text = match self {
            QueryType::P1 => "(p 0 (e 0))",
            QueryType::P2 => "(p 0 (p 0 (e 0)))",
            QueryType::P3 => "(p 0 (p 0 (p 0 (e 0))))",
            QueryType::I2 => "(i (p 0 (e 0)) (p 0 (e 0)))",
            QueryType::I3 => "(i (p 0 (e 0)) (p 0 (e 0)) (p 0 (e 0)))",
            QueryType::Pi => "(i (p 0 (p 0 (e 0))) (p 0 (e 0)))",
            QueryType::Ip => "(p 0 (i (p 0 (e 0)) (p 0 (e 0))))",
            QueryType::U2 => "(u (p 0 (e 0)) (p 0 (e 0)))",
            QueryType::Up => "(p 0 (u (p 0 (e 0)) (p 0 (e 0))))",
            QueryType::In2 => "(i (p 0 (e 0)) (n (p 0 (e 0))))",
            QueryType::In3 => "(i (p 0 (e 0)) (p 0 (e 0)) (n (p 0 (e 0))))",
            QueryType::Inp => "(p 0 (i (p 0 (e 0)) (n (p 0 (e 0)))))",
            QueryType::Pin => "(i (p 0 (p 0 (e 0))) (n (p 0 (e 0))))",
            QueryType::Pni => "(i (p 0 (e 0)) (n (p 0 (p 0 (e 0)))))",
        };
        parse_query(text).expect("built-in template parses")
    }

    pub fn has_negation(self) -> bool {
        matches!(
            self,
            QueryType::In2 | QueryType::In3 | QueryType::Inp | QueryType::Pin | QueryType::Pni
        )
    }

    pub fn has_union(self) -> bool {
        matches!(self, QueryType::U2 | QueryType::Up)
    }

    /// Recognizes the shape of a tree, ignoring ids and operand order.
    pub fn classify(tree: &OperatorTree) -> Option<QueryType> {
        let sig = tree.signature();
        QueryType::ALL.into_iter().find(|t| t.template().signature() == sig)
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for QueryType {
    type Err = WfreError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        QueryType::ALL
            .into_iter()
            .find(|t| t.name() == lower)
            .ok_or_else(|| WfreError::Validation(format!("unknown query type `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> OperatorTree {
        parse_query(s).unwrap()
    }

    #[test]
    fn parses_projection() {
        assert_eq!(q("(p 2 (e 7))"), OperatorTree::project(2, OperatorTree::anchor(7)));
        assert_eq!(q("  ( p 2\n(e 7) ) "), q("(p 2 (e 7))"));
    }

    #[test]
    fn parses_negation_shape() {
        let t = q("(i (p 0 (e 1)) (n (p 1 (e 2))))");
        assert_eq!(QueryType::classify(&t), Some(QueryType::In2));
        assert_eq!(
            t,
            OperatorTree::Intersection(vec![
                OperatorTree::project(0, OperatorTree::anchor(1)),
                OperatorTree::negate(OperatorTree::project(1, OperatorTree::anchor(2))),
            ])
        );
    }

    #[test]
    fn reports_syntax_errors() {
        let text = "(u (e 1)";
        match parse_query(text) {
            Err(WfreError::Syntax { offset, message }) => {
                assert_eq!(offset, text.len());
                assert!(message.contains("end of input"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        for (bad, at) in [
            ("(x 1)", 1),
            ("(p 1)", 4),
            ("(i (e 1))", 1),
            ("(e -1)", 3),
            ("(e 1) (e 2)", 6),
            ("(e 99999999999)", 3),
            ("", 0),
            ("(n (e 1) (e 2))", 9),
        ] {
            match parse_query(bad) {
                Err(WfreError::Syntax { offset, .. }) => assert_eq!(offset, at, "{bad}"),
                other => panic!("{bad}: {other:?}"),
            }
        }
        let deep = "(n ".repeat(MAX_DEPTH + 2) + "(e 0)" + &")".repeat(MAX_DEPTH + 2);
        assert!(parse_query(&deep).is_err());
    }

    #[test]
    fn round_trips_all_templates() {
        for t in QueryType::ALL {
            let tree = t.template();
            assert_eq!(parse_query(&serialize_query(&tree)).unwrap(), tree);
            assert_eq!(QueryType::classify(&tree), Some(t));
            assert_eq!(t.name().parse::<QueryType>().unwrap(), t);
        }
        let swapped = q("(i (p 3 (e 1)) (p 0 (p 1 (e 2))))");
        assert_eq!(QueryType::classify(&swapped), Some(QueryType::Pi));
    }

    #[test]
    fn dnf_rewrites() {
        let t = q("(i (p 0 (e 1)) (n (p 1 (e 2))))");
        assert_eq!(to_dnf(&t).unwrap(), vec![t.clone()]);
        assert_eq!(
            to_dnf(&q("(u (p 0 (e 1)) (p 1 (e 2)))")).unwrap(),
            vec![q("(p 0 (e 1))"), q("(p 1 (e 2))")]
        );
        assert_eq!(
            to_dnf(&q("(p 5 (u (e 1) (e 2)))")).unwrap(),
            vec![q("(p 5 (e 1))"), q("(p 5 (e 2))")]
        );
        assert_eq!(to_dnf(&q("(i (u (e 1) (e 2)) (u (e 3) (e 4)))")).unwrap().len(), 4);
        assert!(matches!(
            to_dnf(&q("(n (u (e 1) (e 2)))")),
            Err(WfreError::Unsupported(_))
        ));
    }

    #[test]
    fn dnf_blowup_is_bounded() {
        let u = "(u (e 1) (e 2) (e 3) (e 4))";
        let text = format!("(i {})", vec![u; 7].join(" "));
        assert!(matches!(to_dnf(&q(&text)), Err(WfreError::Unsupported(_))));
    }

    #[test]
    fn de_morgan_rewrites() {
        let t = q("(i (p 0 (e 1)) (p 1 (e 2)))");
        assert_eq!(apply_de_morgan(&t), t);
        assert_eq!(apply_de_morgan(&q("(u (e 1) (e 2))")), q("(n (i (n (e 1)) (n (e 2))))"));
    }

    #[test]
    fn id_checks() {
        let t = q("(p 4 (i (e 2) (e 9)))");
        assert_eq!(t.max_entity(), Some(9));
        assert_eq!(t.max_relation(), Some(4));
        assert!(t.check_ids(10, 5).is_ok());
        assert!(matches!(t.check_ids(9, 5), Err(WfreError::Lookup(_))));
        assert!(matches!(t.check_ids(10, 4), Err(WfreError::Lookup(_))));
    }
}
