//! Evaluation metrics: F-beta from counts, ROC AUC, RMSE and the
//! robustness improvement percentage.
//!
//! ```text
//! cargo run --example metrics
//! ```

use dodem::metrics::{f_beta, improvement_pct, rmse, roc_auc, Confusion};

fn main() -> dodem::Result<()> {
    let truth = [true, false, false, true, false, false, true, false];
    let predicted = [true, true, false, true, false, false, false, false];
    let scores = [0.9, 0.7, 0.1, 0.8, 0.3, 0.2, 0.4, 0.05];
    let c = Confusion::from_labels(&predicted, &truth)?;
    println!("tp {} fp {} tn {} fn {}", c.tp, c.fp, c.tn, c.fn_);
    println!("precision {:.3} recall {:.3}", c.precision(), c.recall());
    for beta in [0.5, 1.0, 2.0] {
        println!("F{beta} = {:.4}", f_beta(c.tp, c.fp, c.fn_, beta));
    }
    println!("ROC AUC {:.4}", roc_auc(&scores, &truth)?);
    let e = rmse(&[10.0, 22.0, 35.0], &[12.0, 20.0, 40.0])?;
    println!("RMSE {e:.4}");
    println!("improvement of 18.2 over 25.0: {:.1}%", improvement_pct(25.0, 18.2)?);
    Ok(())
}
