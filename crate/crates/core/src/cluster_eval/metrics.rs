//! Pair-counting and information-theoretic agreement between partitions.

use super::Partition;
use crate::error::{Error, Result};

fn contingency(a: &Partition, b: &Partition) -> Result<Vec<Vec<u64>>> {
    if a.len() != b.len() {
        return Err(Error::Length {
            expected: a.len(),
            found: b.len(),
        });
    }
    let mut table = vec![vec![0u64; b.n_clusters()]; a.n_clusters()];
    for (&x, &y) in a.assignments().iter().zip(b.assignments()) {
        table[x][y] += 1;
    }
    Ok(table)
}

fn pairs(count: u64) -> i128 {
    let c = count as i128;
    c * (c - 1) / 2
}

/// Adjusted Rand Index. Identical partitions (up to relabeling) score 1,
/// including the degenerate single-cluster and all-singleton cases.
///
/// All pair counts are integers, so the index is formed as one exact integer
/// ratio and rounded once.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    let table = contingency(a, b)?;
    let n = a.len() as u64;
    if n < 2 {
        return Ok(1.0);
    }
    let index: i128 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_a: i128 = table.iter().map(|row| pairs(row.iter().sum())).sum();
    let sum_b: i128 = (0..b.n_clusters())
        .map(|j| pairs(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = pairs(n);
    // (index − E) / (max − E) with E = sum_a·sum_b/total, max = (sum_a+sum_b)/2,
    // multiplied through by 2·total.
    let num = 2 * (index * total - sum_a * sum_b);
    let denom = (sum_a + sum_b) * total - 2 * sum_a * sum_b;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(ratio(num, denom))
}

/// `num / denom`, correctly rounded whenever the reduced operands fit in
/// 53 bits.
fn ratio(num: i128, denom: i128) -> f64 {
    let (mut x, mut y) = (num.unsigned_abs(), denom.unsigned_abs());
    while y != 0 {
        (x, y) = (y, x % y);
    }
    let g = x.max(1) as i128;
    (num / g) as f64 / (denom / g) as f64
}

fn entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two entropies
/// (natural log). Two single-cluster partitions score 1.
pub fn normalized_mutual_information(a: &Partition, b: &Partition) -> Result<f64> {
    let table = contingency(a, b)?;
    let n = a.len() as f64;
    let rows: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..b.n_clusters())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let h_a = entropy(rows.iter().copied(), n);
    let h_b = entropy(cols.iter().copied(), n);
    let norm = 0.5 * (h_a + h_b);
    if norm == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    Ok((mi / norm).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(ids: &[usize]) -> Partition {
        Partition::from_labels(ids)
    }

    #[test]
    fn ari_fixed_values() {
        assert_eq!(adjusted_rand_index(&p(&[0, 0, 1, 1]), &p(&[0, 1, 0, 1])).unwrap(), -0.5);
        assert_eq!(adjusted_rand_index(&p(&[0, 0, 1, 2]), &p(&[5, 5, 7, 1])).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&p(&[0, 0, 0]), &p(&[1, 1, 1])).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&p(&[0, 1, 2]), &p(&[2, 0, 1])).unwrap(), 1.0);
    }

    #[test]
    fn nmi_fixed_values() {
        assert!(normalized_mutual_information(&p(&[0, 0, 1, 1]), &p(&[0, 1, 0, 1]))
            .unwrap()
            .abs()
            < 1e-15);
        assert_eq!(normalized_mutual_information(&p(&[0, 0, 1, 1]), &p(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(normalized_mutual_information(&p(&[0, 0]), &p(&[3, 3])).unwrap(), 1.0);
        assert_eq!(normalized_mutual_information(&p(&[0, 0, 0, 0]), &p(&[0, 0, 1, 1])).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            adjusted_rand_index(&p(&[0, 1]), &p(&[0])),
            Err(Error::Length { .. })
        ));
        assert!(matches!(
            normalized_mutual_information(&p(&[0, 1]), &p(&[0])),
            Err(Error::Length { .. })
        ));
    }
}
