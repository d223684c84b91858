use super::EvalError;

pub const MATCH: i64 = 2;
pub const MISMATCH: i64 = -1;
pub const GAP: i64 = -2;
pub const GAP_CHAR: char = '-';

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    pub aligned_a: String,
    pub aligned_b: String,
    /// Identical columns over alignment length, gap columns included.
    pub identity: f64,
    pub score: i64,
    pub matches: usize,
}

impl AlignmentResult {
    pub fn len(&self) -> usize {
        self.aligned_a.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.aligned_a.is_empty()
    }
}

fn pair_score(x: char, y: char) -> i64 {
    if x == y {
        MATCH
    } else {
        MISMATCH
    }
}

/// Optimal global alignment with linear gaps. Among optimal alignments the one
/// with the most identical columns is kept; identity is a function of
/// `(score, matches)` so the remaining ties do not affect it.
pub fn global_sequence_identity(a: &str, b: &str) -> Result<AlignmentResult, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyInput("alignment needs two non-empty sequences".into()));
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    // (score, matches), compared lexicographically
    let mut dp = vec![(0i64, 0usize); (n + 1) * w];
    for i in 1..=n {
        dp[i * w] = (GAP * i as i64, 0);
    }
    for j in 1..=m {
        dp[j] = (GAP * j as i64, 0);
    }
    for i in 1..=n {
        for j in 1..=m {
            let (ds, dm) = dp[(i - 1) * w + j - 1];
            let diag = (ds + pair_score(a[i - 1], b[j - 1]), dm + usize::from(a[i - 1] == b[j - 1]));
            let up = (dp[(i - 1) * w + j].0 + GAP, dp[(i - 1) * w + j].1);
            let left = (dp[i * w + j - 1].0 + GAP, dp[i * w + j - 1].1);
            dp[i * w + j] = diag.max(up).max(left);
        }
    }

    let (mut i, mut j) = (n, m);
    let mut ra = Vec::with_capacity(n + m);
    let mut rb = Vec::with_capacity(n + m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let (ds, dm) = dp[(i - 1) * w + j - 1];
            let same = a[i - 1] == b[j - 1];
            if (ds + pair_score(a[i - 1], b[j - 1]), dm + usize::from(same)) == here {
                ra.push(a[i - 1]);
                rb.push(b[j - 1]);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && (dp[(i - 1) * w + j].0 + GAP, dp[(i - 1) * w + j].1) == here {
            ra.push(a[i - 1]);
            rb.push(GAP_CHAR);
            i -= 1;
        } else {
            ra.push(GAP_CHAR);
            rb.push(b[j - 1]);
            j -= 1;
        }
    }
    ra.reverse();
    rb.reverse();
    let (score, matches) = dp[n * w + m];
    Ok(AlignmentResult {
        identity: matches as f64 / ra.len() as f64,
        aligned_a: ra.into_iter().collect(),
        aligned_b: rb.into_iter().collect(),
        score,
        matches,
    })
}
