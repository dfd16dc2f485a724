use crate::error::{Error, Result};

/// Reward/penalty score of sequences against their cluster patterns.
///
/// Each bin contributes `-P(observed class) + P(other class)`, where the
/// present-class value is the pattern's probability `p` and the absent-class
/// value `1 - p`. Lower is better: a sequence identical to a 0/1 pattern
/// scores `-len`. With `normalize`, each pattern is first scaled to unit L2
/// norm.
///
/// `assignment[i]` indexes into `patterns`.
pub fn accuracy_score(
    sequences: &[&[bool]],
    patterns: &[Vec<f64>],
    assignment: &[Option<usize>],
    normalize: bool,
) -> Result<f64> {
    if sequences.len() != assignment.len() {
        return Err(Error::LengthMismatch {
            left: sequences.len(),
            right: assignment.len(),
        });
    }
    let scaled: Vec<Vec<f64>> = patterns
        .iter()
        .map(|p| {
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if normalize && norm > 0.0 {
                p.iter().map(|v| v / norm).collect()
            } else {
                p.clone()
            }
        })
        .collect();
    let mut total = 0.0;
    for (i, (seq, a)) in sequences.iter().zip(assignment).enumerate() {
        let k = a.ok_or_else(|| Error::Contract(format!("sequence {i} has no pattern")))?;
        let pattern = scaled
            .get(k)
            .ok_or_else(|| Error::Contract(format!("sequence {i} assigned to missing pattern {k}")))?;
        if pattern.len() != seq.len() {
            return Err(Error::LengthMismatch {
                left: seq.len(),
                right: pattern.len(),
            });
        }
        for (&bit, &p) in seq.iter().zip(pattern) {
            let (present, absent) = (p, 1.0 - p);
            total += if bit { absent - present } else { present - absent };
        }
    }
    Ok(total)
}
