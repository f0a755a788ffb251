//! Inter-annotator agreement.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Cohen's kappa for two raters over the same items.
///
/// When chance agreement is total (both raters used one identical label)
/// kappa is 1.0 if they also agree on every item, and undefined otherwise.
pub fn cohens_kappa<T: Eq + Hash>(labels_a: &[T], labels_b: &[T]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::Validation(format!(
            "label lists differ in length ({} vs {})",
            labels_a.len(),
            labels_b.len()
        )));
    }
    if labels_a.is_empty() {
        return Err(Error::Validation("kappa needs at least one item".into()));
    }
    let n = labels_a.len();
    let agree = labels_a.iter().zip(labels_b).filter(|(a, b)| a == b).count();

    let mut marginals: HashMap<&T, (usize, usize)> = HashMap::new();
    for a in labels_a {
        marginals.entry(a).or_default().0 += 1;
    }
    for b in labels_b {
        marginals.entry(b).or_default().1 += 1;
    }
    // Integer numerators keep the degenerate check exact.
    let chance_num: usize = marginals.values().map(|(ca, cb)| ca * cb).sum();
    let n2 = n * n;
    if chance_num == n2 {
        return if agree == n {
            Ok(1.0)
        } else {
            Err(Error::Validation("kappa undefined: chance agreement is 1 but observed is not".into()))
        };
    }
    let p_o = agree as f64 / n as f64;
    let p_e = chance_num as f64 / n2 as f64;
    Ok((p_o - p_e) / (1.0 - p_e))
}
