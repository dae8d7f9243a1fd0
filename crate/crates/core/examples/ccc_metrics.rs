//! Concordance correlation on small hand cases and the mean-shift law.
//!
//! cargo run --example ccc_metrics

use peftlab::metrics::{accuracy, ccc, cv_mean, pearson, EvalResult};

fn main() -> peftlab::Result<()> {
    let x = [1.0, 2.0, 3.0];
    println!("identity          {}", ccc(&x, &x)?);
    println!("reversed          {}", ccc(&[3.0, 2.0, 1.0], &x)?);
    println!("shifted by 1      {} (4/7 = {})", ccc(&[2.0, 3.0, 4.0], &x)?, 4.0 / 7.0);
    println!("pearson ignores the shift: {}", pearson(&[2.0, 3.0, 4.0], &x)?);

    // Shifting a copy by c gives 2σ²/(2σ² + c²), σ² the population variance.
    let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
    for c in [0.1, 0.5, 2.0] {
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let law = 2.0 * var / (2.0 * var + c * c);
        println!("c = {c}: ccc {:.12}, law {:.12}", ccc(&shifted, &y)?, law);
    }

    println!("accuracy {}", accuracy(&[1, 2, 3, 3], &[1, 2, 3, 0])?);
    let folds = [EvalResult::classification(0.5, 10), EvalResult::classification(0.75, 10)];
    println!("fold mean {:?}", cv_mean(&folds)?.acc);
    Ok(())
}
