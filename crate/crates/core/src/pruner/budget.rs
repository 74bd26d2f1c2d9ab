use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100_000;

/// Geometrically shrinking MAC budgets `R_t = R_{t-1} - delta_0 · decay^(t-1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub r0: f64,
    pub delta0: f64,
    pub decay: f64,
    /// `R_1..R_T`; ends at the first budget at or below the final target.
    pub budgets: Vec<f64>,
}

impl BudgetSchedule {
    pub fn iterations(&self) -> usize {
        self.budgets.len()
    }
}

pub fn budget_schedule(r0: f64, delta0: f64, decay: f64, final_budget: f64) -> Result<BudgetSchedule> {
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::invalid(format!("decay must be in (0, 1], got {decay}")));
    }
    if !(delta0 > 0.0 && delta0 < r0) {
        return Err(Error::invalid(format!("initial reduction must be in (0, {r0}), got {delta0}")));
    }
    if !final_budget.is_finite() {
        return Err(Error::invalid("final budget must be finite"));
    }
    if decay < 1.0 && r0 - delta0 / (1.0 - decay) >= final_budget {
        return Err(Error::BudgetInfeasible(format!(
            "reductions of {delta0} decaying by {decay} never reach {final_budget} from {r0}"
        )));
    }
    let mut budgets = Vec::new();
    let mut current = r0;
    let mut step = delta0;
    while current > final_budget {
        if budgets.len() == MAX_ITERATIONS {
            return Err(Error::BudgetInfeasible(format!("more than {MAX_ITERATIONS} iterations needed")));
        }
        current -= step;
        step *= decay;
        budgets.push(current);
    }
    Ok(BudgetSchedule {
        r0,
        delta0,
        decay,
        budgets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn geometric_examples() {
        let s = budget_schedule(100.0, 5.0, 0.98, 85.0).unwrap();
        assert!((s.budgets[0] - 95.0).abs() < 1e-9);
        assert!((s.budgets[1] - 90.1).abs() < 1e-9);
        assert!((s.budgets[2] - 85.298).abs() < 1e-9);
        assert_eq!(s.iterations(), 4);
        assert_eq!(budget_schedule(100.0, 5.0, 1.0, 90.0).unwrap().budgets, vec![95.0, 90.0]);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(budget_schedule(100.0, 5.0, 0.9, 100.0).unwrap().iterations(), 0);
        assert!(matches!(budget_schedule(100.0, 5.0, 0.9, 40.0), Err(Error::BudgetInfeasible(_))));
        assert!(budget_schedule(100.0, 5.0, 0.0, 90.0).is_err());
        assert!(budget_schedule(100.0, 5.0, 1.2, 90.0).is_err());
        assert!(budget_schedule(100.0, 0.0, 0.9, 90.0).is_err());
        assert!(budget_schedule(100.0, 100.0, 0.9, 90.0).is_err());
    }

    proptest! {
        #[test]
        fn strictly_decreasing_and_stops_at_first_crossing(
            delta in 0.5f64..20.0,
            decay in 0.8f64..=1.0,
            target in 30.0f64..99.0,
        ) {
            if let Ok(s) = budget_schedule(100.0, delta, decay, target) {
                prop_assert!(s.budgets.windows(2).all(|w| w[1] < w[0]));
                prop_assert!(*s.budgets.last().unwrap() <= target);
                prop_assert!(s.budgets[..s.budgets.len() - 1].iter().all(|&b| b > target));
            }
        }
    }
}
