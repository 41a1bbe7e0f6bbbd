//! Group metric differences and consistency on a hand-checkable fixture.
//!
//! `cargo run --example group_metrics`

use fairknn::fairness::{consistency, group_confusions, group_diffs, ConsistencyForm, DpMode};
use fairknn::neighbors::Distance;
use ndarray::Array2;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // first four rows privileged, last four unprivileged
    let labels = [true, true, false, false, true, true, true, false];
    let preds = [true, true, true, false, true, false, false, false];
    let privileged = [true, true, true, true, false, false, false, false];

    let (p, u) = group_confusions(&preds, &labels, &privileged)?;
    println!("privileged   {p:?}");
    println!("unprivileged {u:?}");
    for mode in [DpMode::TprFpr, DpMode::PositiveRate] {
        let d = group_diffs(&p, &u, mode)?;
        println!(
            "{mode:?}: dp {:.4}  eq_opp {:.4}  eq_acc {:.4}  eq_odds {:.4}",
            d.dp_diff, d.eq_opp_diff, d.eq_acc_diff, d.eq_odds_diff
        );
    }

    let x = Array2::from_shape_vec((8, 1), vec![0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0])?;
    for form in [ConsistencyForm::NeighborMean, ConsistencyForm::AsPrinted] {
        let c = consistency(&preds, x.view(), 2, &Distance::Euclidean, form)?;
        println!("consistency ({form:?}, k=2): {c:.4}");
    }
    Ok(())
}
