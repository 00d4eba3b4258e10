use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fold {
    pub index: usize,
    pub test: Vec<String>,
    pub validation: Vec<String>,
    pub train: Vec<String>,
}

/// Subject-wise partition for k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldPlan {
    pub k: usize,
    pub n_val: usize,
    pub seed: u64,
    pub roster: Vec<String>,
    pub folds: Vec<Fold>,
}

/// Shuffles the roster with `seed`, slices it into `k` contiguous test groups
/// (sizes differ by at most one) and, per fold, draws `n_val` validation
/// subjects from the non-test remainder.
pub fn make_folds(roster: &[String], k: usize, n_val: usize, seed: u64) -> Result<FoldPlan> {
    let unique: BTreeSet<&String> = roster.iter().collect();
    if unique.len() != roster.len() {
        return Err(Error::Contract("roster contains duplicate subjects".into()));
    }
    let n = roster.len();
    if k < 2 || k > n {
        return Err(Error::Contract(format!(
            "k = {k} folds needs 2 ≤ k ≤ {n} subjects"
        )));
    }
    let largest_test = n.div_ceil(k);
    if n_val > n - largest_test {
        return Err(Error::Contract(format!(
            "n_val = {n_val} exceeds the {} subjects left after the largest test group",
            n - largest_test
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<String> = roster.to_vec();
    order.sort();
    order.shuffle(&mut rng);

    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for index in 0..k {
        let size = n / k + usize::from(index < n % k);
        let mut test: Vec<String> = order[start..start + size].to_vec();
        let mut rest: Vec<String> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .cloned()
            .collect();
        start += size;
        rest.shuffle(&mut rng);
        let mut validation: Vec<String> = rest.drain(..n_val).collect();
        test.sort();
        validation.sort();
        rest.sort();
        folds.push(Fold {
            index,
            test,
            validation,
            train: rest,
        });
    }
    let mut sorted = roster.to_vec();
    sorted.sort();
    Ok(FoldPlan {
        k,
        n_val,
        seed,
        roster: sorted,
        folds,
    })
}

impl FoldPlan {
    /// Checks every structural invariant of the plan.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(format!("fold plan: {m}")));
        if self.folds.len() != self.k {
            return bad(format!("{} folds for k = {}", self.folds.len(), self.k));
        }
        let roster: BTreeSet<&String> = self.roster.iter().collect();
        if roster.len() != self.roster.len() {
            return bad("duplicate subject in roster".into());
        }
        let mut tested: BTreeSet<&String> = BTreeSet::new();
        for (i, f) in self.folds.iter().enumerate() {
            if f.index != i {
                return bad(format!("fold {i} carries index {}", f.index));
            }
            if f.validation.len() != self.n_val {
                return bad(format!(
                    "fold {i} has {} validation subjects, expected {}",
                    f.validation.len(),
                    self.n_val
                ));
            }
            let parts = [&f.test, &f.validation, &f.train];
            let mut seen: BTreeSet<&String> = BTreeSet::new();
            for part in parts {
                for s in part {
                    if !roster.contains(s) {
                        return bad(format!("fold {i}: subject {s} not in roster"));
                    }
                    if !seen.insert(s) {
                        return bad(format!("fold {i}: subject {s} appears twice"));
                    }
                }
            }
            if seen.len() != roster.len() {
                return bad(format!("fold {i} does not cover the roster"));
            }
            for s in &f.test {
                if !tested.insert(s) {
                    return bad(format!("subject {s} tested in more than one fold"));
                }
            }
        }
        if tested.len() != roster.len() {
            return bad("some subjects are never tested".into());
        }
        Ok(())
    }

    /// Checks that the plan was built for exactly this set of subjects.
    pub fn check_roster(&self, roster: &[String]) -> Result<()> {
        let a: BTreeSet<&String> = self.roster.iter().collect();
        let b: BTreeSet<&String> = roster.iter().collect();
        if a != b {
            return Err(Error::Contract(format!(
                "fold plan roster {:?} does not match dataset roster {:?}",
                self.roster, roster
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fold plan serializes")
    }

    /// Parses and validates a plan. Never panics on malformed input.
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: FoldPlan =
            serde_json::from_str(text).map_err(|e| Error::Contract(format!("fold plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roster(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("S{i:02}")).collect()
    }

    #[test]
    fn sixteen_subjects_four_folds() {
        let plan = make_folds(&roster(16), 4, 2, 42).unwrap();
        plan.validate().unwrap();
        for f in &plan.folds {
            assert_eq!((f.test.len(), f.validation.len(), f.train.len()), (4, 2, 10));
        }
    }

    #[test]
    fn leave_one_subject_out() {
        let plan = make_folds(&roster(6), 6, 1, 0).unwrap();
        plan.validate().unwrap();
        for f in &plan.folds {
            assert_eq!((f.test.len(), f.validation.len(), f.train.len()), (1, 1, 4));
        }
    }

    #[test]
    fn uneven_sizes_differ_by_one() {
        let plan = make_folds(&roster(10), 4, 2, 1).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
    }

    #[test]
    fn rejects_oversized_validation() {
        assert!(make_folds(&roster(16), 4, 13, 0).is_err());
        assert!(make_folds(&roster(16), 4, 12, 0).is_ok());
        assert!(make_folds(&roster(4), 1, 0, 0).is_err());
        assert!(make_folds(&roster(4), 5, 0, 0).is_err());
    }

    #[test]
    fn json_round_trip_and_tamper_detection() {
        let plan = make_folds(&roster(8), 4, 2, 5).unwrap();
        assert_eq!(FoldPlan::from_json(&plan.to_json()).unwrap(), plan);
        let mut broken = plan.clone();
        let leaked = broken.folds[0].test[0].clone();
        broken.folds[0].train.push(leaked);
        assert!(FoldPlan::from_json(&broken.to_json()).is_err());
        assert!(FoldPlan::from_json("{").is_err());
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut r = roster(12);
        let a = make_folds(&r, 3, 2, 9).unwrap();
        r.reverse();
        assert_eq!(make_folds(&r, 3, 2, 9).unwrap(), a);
    }
}
