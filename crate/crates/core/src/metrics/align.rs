//! Unit-cost Levenshtein alignment with a fixed backtrace rule.
//!
//! When several predecessors of a cell reach its minimum cost, the
//! backtrace takes the diagonal (match or substitution) first, then the
//! vertical move (deletion of a reference unit), then the horizontal move
//! (insertion of a hypothesis unit). The rule makes S/D/I counts
//! reproducible when more than one minimum-cost alignment exists.

use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Character error rate in percent.
    pub fn cer(&self) -> f64 {
        cer(self)
    }
}

impl std::ops::Add for ErrorCounts {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            substitutions: self.substitutions + rhs.substitutions,
            deletions: self.deletions + rhs.deletions,
            insertions: self.insertions + rhs.insertions,
            ref_len: self.ref_len + rhs.ref_len,
        }
    }
}

impl std::iter::Sum for ErrorCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// `100 * (S + D + I) / ref_len`; zero-length references score 0.
pub fn cer(counts: &ErrorCounts) -> f64 {
    if counts.ref_len == 0 {
        return 0.0;
    }
    100.0 * counts.errors() as f64 / counts.ref_len as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Match,
    Substitution,
    Deletion,
    Insertion,
}

fn cost_matrix<T: PartialEq>(reference: &[T], hyp: &[T]) -> Vec<Vec<usize>> {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d
}

/// The edit script of the preferred minimum-cost alignment, in reference order.
pub fn alignment<T: PartialEq>(reference: &[T], hyp: &[T]) -> Vec<EditOp> {
    let d = cost_matrix(reference, hyp);
    let (mut i, mut j) = (reference.len(), hyp.len());
    let mut ops = Vec::with_capacity(i.max(j));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                ops.push(if same { EditOp::Match } else { EditOp::Substitution });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(EditOp::Deletion);
            i -= 1;
        } else {
            ops.push(EditOp::Insertion);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// S/D/I counts of `hyp` against a non-empty `reference`.
pub fn levenshtein_align<T: PartialEq>(reference: &[T], hyp: &[T]) -> Result<ErrorCounts, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let mut counts = ErrorCounts {
        ref_len: reference.len(),
        ..Default::default()
    };
    for op in alignment(reference, hyp) {
        match op {
            EditOp::Match => {}
            EditOp::Substitution => counts.substitutions += 1,
            EditOp::Deletion => counts.deletions += 1,
            EditOp::Insertion => counts.insertions += 1,
        }
    }
    Ok(counts)
}
