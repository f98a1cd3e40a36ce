//! Logical query templates and the query-side vectors each one needs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding_store::{l2_norm, onto_sphere, MIN_ROW_NORM};
use crate::error::{NsflError, Result};

/// The six flat Boolean templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaKind {
    And2,
    And3,
    Not2,
    AndNot3,
    Or2,
    Or3,
}

impl FormulaKind {
    /// Report column order.
    pub const ALL: [FormulaKind; 6] = [
        FormulaKind::And2,
        FormulaKind::And3,
        FormulaKind::Not2,
        FormulaKind::AndNot3,
        FormulaKind::Or2,
        FormulaKind::Or3,
    ];

    pub fn arity(self) -> usize {
        match self {
            FormulaKind::And2 | FormulaKind::Not2 | FormulaKind::Or2 => 2,
            FormulaKind::And3 | FormulaKind::AndNot3 | FormulaKind::Or3 => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FormulaKind::And2 => "and2",
            FormulaKind::And3 => "and3",
            FormulaKind::Not2 => "not2",
            FormulaKind::AndNot3 => "and_not3",
            FormulaKind::Or2 => "or2",
            FormulaKind::Or3 => "or3",
        }
    }

    /// Human-readable template, e.g. `A ∧ ¬B`.
    pub fn template(self) -> &'static str {
        match self {
            FormulaKind::And2 => "A ∧ B",
            FormulaKind::And3 => "A ∧ B ∧ C",
            FormulaKind::Not2 => "A ∧ ¬B",
            FormulaKind::AndNot3 => "A ∧ B ∧ ¬C",
            FormulaKind::Or2 => "A ∨ B",
            FormulaKind::Or3 => "A ∨ B ∨ C",
        }
    }
}

impl fmt::Display for FormulaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FormulaKind {
    type Err = NsflError;

    fn from_str(s: &str) -> Result<Self> {
        FormulaKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| NsflError::InvalidFormula(format!("unknown kind `{s}`")))
    }
}

/// Query-side vector slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    A,
    B,
    C,
    AB,
    ABC,
    M,
}

impl Component {
    pub fn key(self) -> &'static str {
        match self {
            Component::A => "A",
            Component::B => "B",
            Component::C => "C",
            Component::AB => "AB",
            Component::ABC => "ABC",
            Component::M => "M",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Component keys a pack of the given kind must carry.
pub fn required_components(kind: FormulaKind) -> &'static [Component] {
    use Component::*;
    match kind {
        FormulaKind::And2 | FormulaKind::Not2 | FormulaKind::Or2 => &[A, B, AB, M],
        FormulaKind::And3 | FormulaKind::Or3 => &[A, B, C, ABC, M],
        FormulaKind::AndNot3 => &[A, B, C, AB, ABC, M],
    }
}

/// Surface realization of the fused query string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStyle {
    #[default]
    Simple,
    Contextual,
}

impl FusionStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionStyle::Simple => "simple",
            FusionStyle::Contextual => "contextual",
        }
    }
}

/// A flat template over named atoms. For `Not2` the second atom is negated,
/// for `AndNot3` the third.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalFormula {
    kind: FormulaKind,
    atoms: Vec<String>,
}

impl LogicalFormula {
    pub fn new(kind: FormulaKind, atoms: Vec<String>) -> Result<Self> {
        if atoms.len() != kind.arity() {
            return Err(NsflError::InvalidFormula(format!(
                "{kind} takes {} atoms, got {}",
                kind.arity(),
                atoms.len()
            )));
        }
        if atoms.iter().any(|a| a.is_empty()) {
            return Err(NsflError::InvalidFormula("empty atom label".into()));
        }
        let distinct: BTreeSet<&String> = atoms.iter().collect();
        if distinct.len() != atoms.len() {
            return Err(NsflError::InvalidFormula(format!(
                "atom labels must be distinct: {atoms:?}"
            )));
        }
        Ok(Self { kind, atoms })
    }

    /// Formula with placeholder atoms `A`, `B`[, `C`].
    pub fn with_default_atoms(kind: FormulaKind) -> Self {
        let atoms = ["A", "B", "C"][..kind.arity()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        Self { kind, atoms }
    }

    pub fn kind(&self) -> FormulaKind {
        self.kind
    }

    pub fn atoms(&self) -> &[String] {
        &self.atoms
    }

    /// Crisp truth value over an item's label set.
    pub fn satisfied_by<S: AsRef<str>>(&self, labels: &[S]) -> bool {
        let has = |i: usize| labels.iter().any(|l| l.as_ref() == self.atoms[i]);
        match self.kind {
            FormulaKind::And2 => has(0) && has(1),
            FormulaKind::And3 => has(0) && has(1) && has(2),
            FormulaKind::Not2 => has(0) && !has(1),
            FormulaKind::AndNot3 => has(0) && has(1) && !has(2),
            FormulaKind::Or2 => has(0) || has(1),
            FormulaKind::Or3 => has(0) || has(1) || has(2),
        }
    }
}

/// One logical query with every embedding its scoring needs.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPack {
    pub qid: String,
    pub formula: LogicalFormula,
    pub fusion_style: FusionStyle,
    /// Component key to vector. Unknown keys (e.g. pairwise `BC`) are kept.
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub ground_truth: Option<BTreeSet<String>>,
}

impl QueryPack {
    pub fn kind(&self) -> FormulaKind {
        self.formula.kind()
    }

    pub fn vector(&self, c: Component) -> Result<&[f64]> {
        self.vectors
            .get(c.key())
            .map(Vec::as_slice)
            .ok_or_else(|| NsflError::MissingComponent(c.key().to_string()))
    }

    pub fn try_vector(&self, c: Component) -> Option<&[f64]> {
        self.vectors.get(c.key()).map(Vec::as_slice)
    }

    /// Dimension of the monolithic vector, if present.
    pub fn dim(&self) -> Option<usize> {
        self.vectors.get("M").or_else(|| self.vectors.values().next()).map(Vec::len)
    }

    pub fn from_record(rec: QueryPackRecord) -> Result<Self> {
        let kind: FormulaKind = rec.kind.parse()?;
        let formula = match rec.atoms {
            Some(atoms) => LogicalFormula::new(kind, atoms)?,
            None => LogicalFormula::with_default_atoms(kind),
        };
        let vectors = rec
            .components
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().map(f64::from).collect()))
            .collect();
        Ok(Self {
            qid: rec.qid,
            formula,
            fusion_style: rec.fusion_style,
            vectors,
            ground_truth: rec.relevant_ids.map(|ids| ids.into_iter().collect()),
        })
    }

    pub fn to_record(&self) -> QueryPackRecord {
        QueryPackRecord {
            qid: self.qid.clone(),
            kind: self.kind().as_str().to_string(),
            fusion_style: self.fusion_style,
            atoms: Some(self.formula.atoms().to_vec()),
            components: self
                .vectors
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|&x| x as f32).collect()))
                .collect(),
            relevant_ids: self
                .ground_truth
                .as_ref()
                .map(|s| s.iter().cloned().collect()),
        }
    }
}

/// Tolerance band within which a component is renormalized rather than rejected.
pub const NEAR_UNIT: (f64, f64) = (0.99, 1.01);

/// Checks required components, dimensions and norms; renormalizes near-unit
/// vectors.
pub fn validate_pack(mut pack: QueryPack, dim: usize) -> Result<QueryPack> {
    for c in required_components(pack.kind()) {
        if !pack.vectors.contains_key(c.key()) {
            return Err(NsflError::MissingComponent(c.key().to_string()));
        }
    }
    for (key, v) in pack.vectors.iter_mut() {
        if v.len() != dim {
            return Err(NsflError::Dimension {
                expected: dim,
                found: v.len(),
            });
        }
        let n = l2_norm(v);
        if !n.is_finite() || n < MIN_ROW_NORM || n < NEAR_UNIT.0 || n > NEAR_UNIT.1 {
            return Err(NsflError::DegenerateVector(format!(
                "{}/{key} (norm {n})",
                pack.qid
            )));
        }
        *v = onto_sphere(v).expect("norm checked above");
    }
    Ok(pack)
}

/// On-disk query pack, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPackRecord {
    pub qid: String,
    pub kind: String,
    #[serde(default)]
    pub fusion_style: FusionStyle,
    /// Optional atom labels; used to derive ground truth from item labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<String>>,
    pub components: BTreeMap<String, Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevant_ids: Option<Vec<String>>,
}

/// Reads a query-pack JSONL file. Syntax errors fail the whole file.
pub fn read_pack_records(path: &Path) -> Result<Vec<QueryPackRecord>> {
    let file = fs::File::open(path).map_err(|e| NsflError::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| NsflError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| NsflError::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_pack_records(path: &Path, packs: &[QueryPack]) -> Result<()> {
    let mut s = String::new();
    for p in packs {
        s.push_str(&serde_json::to_string(&p.to_record()).expect("pack serializes"));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| NsflError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pack(kind: FormulaKind, keys: &[&str], dim: usize) -> QueryPack {
        let mut vectors = BTreeMap::new();
        for (i, k) in keys.iter().enumerate() {
            let mut v = vec![0.0; dim];
            v[i % dim] = 1.0;
            vectors.insert(k.to_string(), v);
        }
        QueryPack {
            qid: "q".into(),
            formula: LogicalFormula::with_default_atoms(kind),
            fusion_style: FusionStyle::Simple,
            vectors,
            ground_truth: None,
        }
    }

    #[test]
    fn required_keys_per_kind() {
        use Component::*;
        assert_eq!(required_components(FormulaKind::Or2), &[A, B, AB, M]);
        assert_eq!(required_components(FormulaKind::And2), &[A, B, AB, M]);
        assert_eq!(required_components(FormulaKind::Not2), &[A, B, AB, M]);
        assert_eq!(
            required_components(FormulaKind::AndNot3),
            &[A, B, C, AB, ABC, M]
        );
        assert_eq!(required_components(FormulaKind::And3), &[A, B, C, ABC, M]);
        assert_eq!(required_components(FormulaKind::Or3), &[A, B, C, ABC, M]);
    }

    #[test]
    fn missing_monolithic_is_reported() {
        let p = pack(FormulaKind::And2, &["A", "B", "AB"], 4);
        assert!(matches!(
            validate_pack(p, 4),
            Err(NsflError::MissingComponent(k)) if k == "M"
        ));
    }

    #[test]
    fn complete_not2_pack_accepted() {
        let p = pack(FormulaKind::Not2, &["A", "B", "AB", "M"], 4);
        assert_eq!(validate_pack(p.clone(), 4).unwrap(), p);
        assert!(matches!(
            validate_pack(p, 5),
            Err(NsflError::Dimension { expected: 5, found: 4 })
        ));
    }

    #[test]
    fn near_unit_vector_renormalized() {
        let mut p = pack(FormulaKind::Not2, &["A", "B", "AB", "M"], 4);
        p.vectors.insert("AB".into(), vec![0.0, 0.0, 0.995, 0.0]);
        let v = validate_pack(p, 4).unwrap();
        assert_eq!(v.vector(Component::AB).unwrap(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn far_from_unit_rejected() {
        let mut p = pack(FormulaKind::Or2, &["A", "B", "AB", "M"], 4);
        p.vectors.insert("B".into(), vec![0.0, 0.5, 0.0, 0.0]);
        assert!(matches!(
            validate_pack(p.clone(), 4),
            Err(NsflError::DegenerateVector(_))
        ));
        p.vectors.insert("B".into(), vec![0.0; 4]);
        assert!(matches!(
            validate_pack(p, 4),
            Err(NsflError::DegenerateVector(_))
        ));
    }

    #[test]
    fn validation_is_idempotent() {
        let mut p = pack(FormulaKind::AndNot3, &["A", "B", "C", "AB", "ABC", "M"], 6);
        p.vectors.insert("ABC".into(), vec![0.3, 0.4, 0.0, 0.0, 0.0, 0.8665]);
        let once = validate_pack(p, 6).unwrap();
        let twice = validate_pack(once.clone(), 6).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn formula_checks_atoms() {
        assert!(LogicalFormula::new(FormulaKind::And3, vec!["a".into(), "b".into()]).is_err());
        assert!(LogicalFormula::new(FormulaKind::Or2, vec!["a".into(), "a".into()]).is_err());
        assert!(LogicalFormula::new(FormulaKind::Or2, vec!["a".into(), "".into()]).is_err());
        let f = LogicalFormula::new(FormulaKind::Not2, vec!["dog".into(), "giraffe".into()])
            .unwrap();
        assert!(f.satisfied_by(&["dog", "man"]));
        assert!(!f.satisfied_by(&["dog", "giraffe"]));
        let f = LogicalFormula::with_default_atoms(FormulaKind::AndNot3);
        assert!(f.satisfied_by(&["A", "B"]));
        assert!(!f.satisfied_by(&["A", "B", "C"]));
        let f = LogicalFormula::with_default_atoms(FormulaKind::Or3);
        assert!(f.satisfied_by(&["C"]));
        assert!(!f.satisfied_by(&["D"]));
    }

    #[test]
    fn record_roundtrip() {
        let line = r#"{"qid":"q1","kind":"and_not3","fusion_style":"contextual","components":{"A":[1.0,0.0]},"relevant_ids":["x"]}"#;
        let rec: QueryPackRecord = serde_json::from_str(line).unwrap();
        let p = QueryPack::from_record(rec).unwrap();
        assert_eq!(p.kind(), FormulaKind::AndNot3);
        assert_eq!(p.fusion_style, FusionStyle::Contextual);
        assert_eq!(p.formula.atoms(), &["A", "B", "C"]);
        let back = QueryPack::from_record(p.to_record()).unwrap();
        assert_eq!(back, p);
        let bad = QueryPackRecord {
            kind: "xor2".into(),
            ..p.to_record()
        };
        assert!(QueryPack::from_record(bad).is_err());
    }
}
