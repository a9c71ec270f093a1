//! Post-hoc analyses over persisted results: AST-subtree diversity, lineage
//! depth of candidate pairs and per-bucket metric breakdowns.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::inference::{ProblemScore, StrategyResult};
use crate::io::sha256_hex;
use crate::model::CuratedProblem;
use crate::pairgen::PairStore;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("could not run parser {program:?}: {source}")]
    Spawn {
        program: PathBuf,
        source: std::io::Error,
    },
    #[error("parser failed: {0}")]
    Parser(String),
    #[error("problem {problem:?} has {attempts} attempts, more than N = {n}")]
    TooManyAttempts {
        problem: String,
        attempts: usize,
        n: usize,
    },
    #[error("lineage cycle through attempt {0:?}")]
    Cycle(String),
    #[error("pair {pair:?} starts from attempt {guess:?}, which is neither an initial guess nor a stored fix")]
    DanglingParent { pair: String, guess: String },
    #[error("unknown axis {0:?}; expected difficulty or category")]
    UnknownAxis(String),
}

/// Digests of every subtree of a program's syntax tree.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtreeSet {
    pub digests: BTreeSet<String>,
    /// False when the source did not parse; `digests` is then empty.
    pub parsed: bool,
}

impl SubtreeSet {
    pub fn unparsed() -> Self {
        SubtreeSet::default()
    }

    pub fn from_serializations<S: AsRef<str>>(dumps: impl IntoIterator<Item = S>) -> Self {
        SubtreeSet {
            digests: dumps
                .into_iter()
                .map(|d| sha256_hex(d.as_ref().as_bytes())[..32].to_string())
                .collect(),
            parsed: true,
        }
    }

    pub fn len(&self) -> usize {
        self.digests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digests.is_empty()
    }

    pub fn difference<'a>(&'a self, other: &'a SubtreeSet) -> impl Iterator<Item = &'a String> {
        self.digests.difference(&other.digests)
    }
}

pub trait SubtreeExtractor {
    /// One set per input program, in order.
    fn subtree_sets(&self, sources: &[&str]) -> Result<Vec<SubtreeSet>, AnalysisError>;
}

const AST_SCRIPT: &str = r#"
import ast, json, sys

class Normalize(ast.NodeTransformer):
    def visit_Name(self, node):
        node.id = "_"
        return node
    def visit_arg(self, node):
        node.arg = "_"
        self.generic_visit(node)
        return node
    def visit_FunctionDef(self, node):
        node.name = "_"
        self.generic_visit(node)
        return node

normalize = len(sys.argv) > 1 and sys.argv[1] == "--normalize"
out = []
for src in json.load(sys.stdin):
    try:
        tree = ast.parse(src)
    except (SyntaxError, ValueError):
        out.append(None)
        continue
    if normalize:
        tree = Normalize().visit(tree)
    out.append(sorted({ast.dump(n, include_attributes=False) for n in ast.walk(tree)}))
json.dump(out, sys.stdout)
"#;

/// Parses Python sources with the interpreter's own `ast` module. A subtree
/// is serialized with `ast.dump` (node kinds, literal values and identifier
/// text, no positions). Digests therefore depend on the interpreter version.
#[derive(Debug, Clone)]
pub struct PythonAstExtractor {
    pub python: PathBuf,
    /// Replace variable, argument and function names with a placeholder.
    pub normalize_identifiers: bool,
}

impl Default for PythonAstExtractor {
    fn default() -> Self {
        PythonAstExtractor {
            python: PathBuf::from("python3"),
            normalize_identifiers: false,
        }
    }
}

impl SubtreeExtractor for PythonAstExtractor {
    fn subtree_sets(&self, sources: &[&str]) -> Result<Vec<SubtreeSet>, AnalysisError> {
        let spawn_err = |source| AnalysisError::Spawn {
            program: self.python.clone(),
            source,
        };
        let mut cmd = Command::new(&self.python);
        cmd.arg("-c").arg(AST_SCRIPT);
        if self.normalize_identifiers {
            cmd.arg("--normalize");
        }
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(spawn_err)?;
        let input = serde_json::to_vec(sources).expect("strings serialize");
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let output = child.wait_with_output().map_err(spawn_err)?;
        writer
            .join()
            .expect("writer thread")
            .map_err(spawn_err)?;
        if !output.status.success() {
            return Err(AnalysisError::Parser(
                String::from_utf8_lossy(&output.stderr).trim().to_string(),
            ));
        }
        let parsed: Vec<Option<Vec<String>>> = serde_json::from_slice(&output.stdout)
            .map_err(|e| AnalysisError::Parser(e.to_string()))?;
        if parsed.len() != sources.len() {
            return Err(AnalysisError::Parser(format!(
                "expected {} results, got {}",
                sources.len(),
                parsed.len()
            )));
        }
        Ok(parsed
            .into_iter()
            .map(|p| p.map_or_else(SubtreeSet::unparsed, SubtreeSet::from_serializations))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub delta: f64,
    /// Novel subtrees per problem, in test-set order.
    pub per_problem_diff_counts: Vec<usize>,
    /// Largest entry of `per_problem_diff_counts`.
    pub s_max: usize,
    pub n: usize,
    pub n_problems: usize,
    /// Attempts (fixes or guesses) whose code did not parse.
    pub unparsed: usize,
    /// Set when nothing parsed at all; `delta` is then 0.
    pub all_unparsed: bool,
}

/// One problem's guess and fix subtree sets.
#[derive(Debug, Clone)]
pub struct ProblemSubtrees {
    pub guess: SubtreeSet,
    pub fixes: Vec<SubtreeSet>,
}

/// `delta = sum_i |S_i| / (n * |problems| * S_max)` where `S_i` is the union
/// over fixes of the subtrees absent from the guess and `S_max = max_i |S_i|`.
pub fn diversity_from_sets(problems: &[ProblemSubtrees], n: usize) -> DiversityReport {
    let counts: Vec<usize> = problems
        .iter()
        .map(|p| {
            p.fixes
                .iter()
                .flat_map(|f| f.difference(&p.guess))
                .collect::<BTreeSet<_>>()
                .len()
        })
        .collect();
    let s_max = counts.iter().copied().max().unwrap_or(0);
    let total: usize = counts.iter().sum();
    let denom = n * problems.len() * s_max;
    let sets = problems.iter().flat_map(|p| std::iter::once(&p.guess).chain(&p.fixes));
    let (mut unparsed, mut seen) = (0, 0);
    for s in sets {
        seen += 1;
        if !s.parsed {
            unparsed += 1;
        }
    }
    DiversityReport {
        delta: if denom == 0 { 0.0 } else { total as f64 / denom as f64 },
        per_problem_diff_counts: counts,
        s_max,
        n,
        n_problems: problems.len(),
        unparsed,
        all_unparsed: seen > 0 && unparsed == seen,
    }
}

fn intern<'a>(code: &'a str, sources: &mut Vec<&'a str>, index: &mut HashMap<&'a str, usize>) -> usize {
    *index.entry(code).or_insert_with(|| {
        sources.push(code);
        sources.len() - 1
    })
}

/// Diversity of the attempts of each problem relative to that problem's
/// guess, normalized by budget `n`. Attempts without code (failed
/// extraction) are skipped.
pub fn diversity_score(
    result: &StrategyResult,
    test: &[CuratedProblem],
    n: usize,
    extractor: &dyn SubtreeExtractor,
) -> Result<DiversityReport, AnalysisError> {
    let mut sources = Vec::new();
    let mut index = HashMap::new();
    let mut layout = Vec::with_capacity(test.len());
    for cp in test {
        let attempts = result.attempts(&cp.problem.id);
        if attempts.len() > n {
            return Err(AnalysisError::TooManyAttempts {
                problem: cp.problem.id.clone(),
                attempts: attempts.len(),
                n,
            });
        }
        let guess = intern(&cp.guess.code, &mut sources, &mut index);
        let fixes: Vec<usize> = attempts
            .iter()
            .filter(|a| !a.code.trim().is_empty())
            .map(|a| intern(&a.code, &mut sources, &mut index))
            .collect();
        layout.push((guess, fixes));
    }
    let sets = extractor.subtree_sets(&sources)?;
    let problems: Vec<ProblemSubtrees> = layout
        .into_iter()
        .map(|(g, fixes)| ProblemSubtrees {
            guess: sets[g].clone(),
            fixes: fixes.into_iter().map(|f| sets[f].clone()).collect(),
        })
        .collect();
    Ok(diversity_from_sets(&problems, n))
}

/// Depth histogram of the pairs in a store. A pair whose guess is an initial
/// guess has depth 1; a pair whose guess is the fix of another pair is one
/// deeper than that pair.
pub fn lineage_histogram(store: &PairStore) -> Result<BTreeMap<usize, usize>, AnalysisError> {
    let by_fix: HashMap<&str, usize> = store
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.fix.id.as_str(), i))
        .collect();
    let pairs = store.pairs();
    let mut depth: Vec<Option<usize>> = vec![None; pairs.len()];
    for start in 0..pairs.len() {
        // Walk up to a known depth or a root, then unwind.
        let mut chain = Vec::new();
        let mut on_chain = std::collections::HashSet::new();
        let mut cur = start;
        let base = loop {
            if let Some(d) = depth[cur] {
                break d;
            }
            if !on_chain.insert(cur) {
                return Err(AnalysisError::Cycle(pairs[cur].guess.id.clone()));
            }
            chain.push(cur);
            let guess = &pairs[cur].guess;
            if guess.parent_attempt.is_none() {
                break 0;
            }
            match by_fix.get(guess.id.as_str()) {
                Some(&parent) => cur = parent,
                None => {
                    return Err(AnalysisError::DanglingParent {
                        pair: pairs[cur].id(),
                        guess: guess.id.clone(),
                    })
                }
            }
        };
        for (k, &i) in chain.iter().rev().enumerate() {
            depth[i] = Some(base + k + 1);
        }
    }
    let mut hist = BTreeMap::new();
    for d in depth.into_iter().flatten() {
        *hist.entry(d).or_insert(0) += 1;
    }
    Ok(hist)
}

pub const UNLABELED: &str = "unlabeled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Difficulty,
    Category,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Difficulty => "difficulty",
            Axis::Category => "category",
        })
    }
}

impl FromStr for Axis {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, AnalysisError> {
        match s {
            "difficulty" => Ok(Axis::Difficulty),
            "category" => Ok(Axis::Category),
            _ => Err(AnalysisError::UnknownAxis(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub bucket: String,
    pub n_problems: usize,
    pub test_pass_rate: f64,
    pub strict_accuracy: f64,
    pub initial_pass_rate: f64,
    pub initial_strict_accuracy: f64,
    /// `test_pass_rate - initial_pass_rate`.
    pub improvement: f64,
}

fn labels(cp: &CuratedProblem, axis: Axis) -> Vec<String> {
    let labels: Vec<String> = match axis {
        Axis::Difficulty => cp.problem.difficulty.iter().cloned().collect(),
        Axis::Category => {
            let unique: BTreeSet<&String> = cp.problem.categories.iter().collect();
            unique.into_iter().cloned().collect()
        }
    };
    if labels.is_empty() {
        vec![UNLABELED.to_string()]
    } else {
        labels
    }
}

/// Per-bucket metrics, buckets in name order. `scores` must be parallel to
/// `test`, as returned by [`crate::inference::problem_scores`]. A problem
/// with several categories counts once in each.
pub fn breakdown(scores: &[ProblemScore], test: &[CuratedProblem], axis: Axis) -> Vec<BucketMetrics> {
    let mut buckets: BTreeMap<String, Vec<&ProblemScore>> = BTreeMap::new();
    for (score, cp) in scores.iter().zip(test) {
        for label in labels(cp, axis) {
            buckets.entry(label).or_default().push(score);
        }
    }
    buckets
        .into_iter()
        .map(|(bucket, members)| {
            let n = members.len() as f64;
            let mean = |f: &dyn Fn(&ProblemScore) -> f64| members.iter().map(|s| f(s)).sum::<f64>() / n;
            let indicator = |b: bool| if b { 1.0 } else { 0.0 };
            let test_pass_rate = mean(&|s| s.best);
            let initial_pass_rate = mean(&|s| s.initial);
            BucketMetrics {
                bucket,
                n_problems: members.len(),
                test_pass_rate,
                strict_accuracy: mean(&|s| indicator(s.solved)),
                initial_pass_rate,
                initial_strict_accuracy: mean(&|s| indicator(s.initial_solved)),
                improvement: test_pass_rate - initial_pass_rate,
            }
        })
        .collect()
}

/// One CSV row per bucket, with a header line.
pub fn buckets_csv(axis: Axis, buckets: &[BucketMetrics]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "axis",
        "bucket",
        "n_problems",
        "test_pass_rate",
        "strict_accuracy",
        "initial_pass_rate",
        "initial_strict_accuracy",
        "improvement",
    ])
    .expect("in-memory writer");
    for b in buckets {
        w.serialize((
            axis.to_string(),
            &b.bucket,
            b.n_problems,
            b.test_pass_rate,
            b.strict_accuracy,
            b.initial_pass_rate,
            b.initial_strict_accuracy,
            b.improvement,
        ))
        .expect("csv row serializes");
    }
    w.into_inner().expect("in-memory writer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{problem_scores, Strategy};
    use crate::model::{Attempt, CandidatePair, Verdict};
    use crate::testutil::{code, curated};
    use proptest::prelude::*;
    use proptest::strategy::Strategy as _;

    /// Each line of a program is one subtree.
    struct LineExtractor;

    impl SubtreeExtractor for LineExtractor {
        fn subtree_sets(&self, sources: &[&str]) -> Result<Vec<SubtreeSet>, AnalysisError> {
            Ok(sources
                .iter()
                .map(|s| {
                    if s.contains("SYNTAX ERROR") {
                        SubtreeSet::unparsed()
                    } else {
                        SubtreeSet::from_serializations(s.lines())
                    }
                })
                .collect())
        }
    }

    fn python_available() -> bool {
        Command::new("python3").arg("-c").arg("pass").status().is_ok_and(|s| s.success())
    }

    fn result_with(problem: &str, codes: &[&str]) -> StrategyResult {
        let mut r = StrategyResult::new(Strategy::Aupair, codes.len());
        r.per_problem.insert(
            problem.into(),
            codes
                .iter()
                .enumerate()
                .map(|(i, c)| Attempt::scored(format!("{problem}/{i}"), *c, vec![Verdict::Pass]))
                .collect(),
        );
        r
    }

    #[test]
    fn identical_fixes_with_one_novel_subtree() {
        let test = vec![curated("P", 1, 0)];
        let fix = format!("{}\nextra", test[0].guess.code);
        let r = result_with("P", &[&fix, &fix]);
        let d = diversity_score(&r, &test, 2, &LineExtractor).unwrap();
        assert_eq!(d.per_problem_diff_counts, [1]);
        assert_eq!(d.s_max, 1);
        assert_eq!(d.delta, 0.5);
    }

    #[test]
    fn identity_and_degenerate_diversity() {
        let test = vec![curated("P", 1, 0)];
        let guess = test[0].guess.code.clone();
        let r = result_with("P", &[&guess, &guess]);
        assert_eq!(diversity_score(&r, &test, 2, &LineExtractor).unwrap().delta, 0.0);
        assert!(matches!(
            diversity_score(&r, &test, 1, &LineExtractor),
            Err(AnalysisError::TooManyAttempts { .. })
        ));
        let r = result_with("P", &["SYNTAX ERROR"]);
        let test = vec![CuratedProblem {
            guess: Attempt::scored("P/guess", "SYNTAX ERROR too", vec![Verdict::WrongOutput]),
            ..test[0].clone()
        }];
        let d = diversity_score(&r, &test, 1, &LineExtractor).unwrap();
        assert!(d.all_unparsed);
        assert_eq!(d.delta, 0.0);
        // failed extractions carry no code and are skipped
        let d = diversity_score(&result_with("P", &[""]), &[curated("P", 1, 0)], 1, &LineExtractor).unwrap();
        assert_eq!(d.per_problem_diff_counts, [0]);
    }

    #[test]
    fn doubling_n_halves_delta() {
        let test = vec![curated("P", 1, 0), curated("Q", 1, 0)];
        let mut r = result_with("P", &["a\nb", "a"]);
        r.per_problem.insert("Q".into(), vec![Attempt::scored("Q/0", "c", vec![Verdict::Pass])]);
        let d2 = diversity_score(&r, &test, 2, &LineExtractor).unwrap();
        let d4 = diversity_score(&r, &test, 4, &LineExtractor).unwrap();
        assert_eq!(d2.per_problem_diff_counts, [2, 1]);
        assert_eq!(d2.delta, 3.0 / 8.0);
        assert_eq!(d4.delta, d2.delta / 2.0);
    }

    #[test]
    fn python_subtrees_by_hand() {
        if !python_available() {
            eprintln!("python3 not available; skipping");
            return;
        }
        let x = PythonAstExtractor::default();
        let sets = x
            .subtree_sets(&["def solve(s): print(s)", "def solve(s): print(s)", "print(1)", "print(1+2)", "def ("])
            .unwrap();
        assert_eq!(sets[0], sets[1]);
        // Module, Expr, Call, BinOp, Add and Constant(2) are new.
        assert_eq!(sets[3].difference(&sets[2]).count(), 6);
        assert_eq!(sets[2].difference(&sets[2]).count(), 0);
        assert!(!sets[4].parsed && sets[4].is_empty());

        let norm = PythonAstExtractor {
            normalize_identifiers: true,
            ..Default::default()
        };
        let sets = norm.subtree_sets(&["def f(a): return a", "def g(b): return b"]).unwrap();
        assert_eq!(sets[0], sets[1]);
        let sets = x.subtree_sets(&["def f(a): return a", "def g(b): return b"]).unwrap();
        assert_ne!(sets[0], sets[1]);
    }

    #[test]
    fn missing_interpreter_is_reported() {
        let x = PythonAstExtractor {
            python: "/nonexistent/python".into(),
            ..Default::default()
        };
        assert!(matches!(x.subtree_sets(&["1"]), Err(AnalysisError::Spawn { .. })));
    }

    fn attempt(id: &str, parent: Option<&str>, passes: usize) -> Attempt {
        let v = (0..4).map(|i| if i < passes { Verdict::Pass } else { Verdict::WrongOutput }).collect();
        Attempt::scored(id, code(passes), v).with_parent(parent.map(str::to_string))
    }

    fn pair(guess: Attempt, fix: Attempt, call: u64) -> CandidatePair {
        CandidatePair::new("P", guess, fix, call).unwrap()
    }

    #[test]
    fn lineage_depths() {
        let g0 = attempt("P/guess", None, 0);
        let f1 = attempt("P/fix@0", Some("P/guess"), 1);
        let f2 = attempt("P/fix@1", Some("P/fix@0"), 2);
        let store = PairStore::from_pairs([pair(g0.clone(), f1.clone(), 0), pair(f1.clone(), f2.clone(), 1)]);
        assert_eq!(lineage_histogram(&store).unwrap(), BTreeMap::from([(1, 1), (2, 1)]));
        // input order does not matter
        let store = PairStore::from_pairs([pair(f1.clone(), f2, 1), pair(g0.clone(), f1, 0)]);
        assert_eq!(lineage_histogram(&store).unwrap(), BTreeMap::from([(1, 1), (2, 1)]));
        let flat = PairStore::from_pairs([
            pair(g0.clone(), attempt("P/fix@0", Some("P/guess"), 1), 0),
            pair(g0, attempt("P/fix@1", Some("P/guess"), 2), 1),
        ]);
        assert_eq!(lineage_histogram(&flat).unwrap(), BTreeMap::from([(1, 2)]));
        assert!(lineage_histogram(&PairStore::new()).unwrap().is_empty());
    }

    #[test]
    fn lineage_corruption_is_detected() {
        let cyclic = PairStore::from_pairs([
            pair(attempt("P/a", Some("P/b"), 1), attempt("P/b", Some("P/a"), 2), 0),
            pair(attempt("P/b", Some("P/a"), 2), attempt("P/a", Some("P/b"), 3), 1),
        ]);
        assert_eq!(cyclic.len(), 2);
        assert!(matches!(lineage_histogram(&cyclic), Err(AnalysisError::Cycle(_))));
        let dangling = PairStore::from_pairs([pair(attempt("P/a", Some("P/z"), 1), attempt("P/c", Some("P/a"), 2), 0)]);
        assert!(matches!(lineage_histogram(&dangling), Err(AnalysisError::DanglingParent { .. })));
    }

    fn labelled(id: &str, difficulty: Option<&str>, categories: &[&str], guess_passes: usize) -> CuratedProblem {
        let mut cp = curated(id, 2, guess_passes);
        cp.problem.difficulty = difficulty.map(str::to_string);
        cp.problem.categories = categories.iter().map(|c| c.to_string()).collect();
        cp
    }

    #[test]
    fn buckets_match_hand_averages() {
        let test = vec![
            labelled("a", Some("A"), &["dp", "math"], 0),
            labelled("b", Some("A"), &["dp"], 1),
            labelled("c", Some("B"), &[], 0),
        ];
        let mut r = StrategyResult::new(Strategy::Aupair, 1);
        let fix = |id: &str, passes: usize| {
            let v = (0..2).map(|i| if i < passes { Verdict::Pass } else { Verdict::WrongOutput }).collect();
            vec![Attempt::scored(id, code(passes), v)]
        };
        r.per_problem.insert("a".into(), fix("a/0", 2));
        r.per_problem.insert("b".into(), fix("b/0", 1));
        r.per_problem.insert("c".into(), fix("c/0", 0));
        let scores = problem_scores(&r, &test, false).unwrap();
        let by_difficulty = breakdown(&scores, &test, Axis::Difficulty);
        assert_eq!(by_difficulty.iter().map(|b| b.bucket.as_str()).collect::<Vec<_>>(), ["A", "B"]);
        assert_eq!(by_difficulty[0].test_pass_rate, 0.75);
        assert_eq!(by_difficulty[0].strict_accuracy, 0.5);
        assert_eq!(by_difficulty[0].initial_pass_rate, 0.25);
        assert_eq!(by_difficulty[0].improvement, 0.5);
        assert_eq!(by_difficulty[1].test_pass_rate, 0.0);
        // weighted bucket means recover the corpus mean
        let corpus = scores.iter().map(|s| s.best).sum::<f64>() / 3.0;
        let weighted = by_difficulty.iter().map(|b| b.test_pass_rate * b.n_problems as f64).sum::<f64>() / 3.0;
        assert!((corpus - weighted).abs() < 1e-12);

        let by_category = breakdown(&scores, &test, Axis::Category);
        let names: Vec<_> = by_category.iter().map(|b| (b.bucket.as_str(), b.n_problems)).collect();
        assert_eq!(names, [("dp", 2), ("math", 1), (UNLABELED, 1)]);

        let bare = vec![labelled("a", None, &[], 0)];
        let scores = problem_scores(&StrategyResult::new(Strategy::Aupair, 0), &bare, false).unwrap();
        let rows = breakdown(&scores, &bare, Axis::Difficulty);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].bucket, UNLABELED);
        let csv = String::from_utf8(buckets_csv(Axis::Difficulty, &rows)).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("difficulty,unlabeled,1,"));
        assert_eq!("category".parse::<Axis>().unwrap(), Axis::Category);
        assert!("size".parse::<Axis>().is_err());
    }

    fn sets_strategy() -> impl proptest::strategy::Strategy<Value = (Vec<ProblemSubtrees>, usize)> {
        let set = proptest::collection::btree_set(0u8..20, 0..10)
            .prop_map(|s| SubtreeSet::from_serializations(s.iter().map(|x| x.to_string())));
        (1usize..5).prop_flat_map(move |n| {
            let problem = (set.clone(), proptest::collection::vec(set.clone(), 0..=n))
                .prop_map(|(guess, fixes)| ProblemSubtrees { guess, fixes });
            (proptest::collection::vec(problem, 1..6), Just(n))
        })
    }

    proptest! {
        #[test]
        fn delta_is_a_fraction((problems, n) in sets_strategy()) {
            let d = diversity_from_sets(&problems, n);
            prop_assert!((0.0..=1.0).contains(&d.delta));
            prop_assert_eq!(d.s_max, d.per_problem_diff_counts.iter().copied().max().unwrap_or(0));
        }
    }
}
