//! NMI, ACC (Hungarian matching) and ARI on a small labelling.

use kec::eval::{contingency, EvalReport};
use kec::tensorio::LabelVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = LabelVector::new(vec![0, 0, 0, 1, 1, 1, 2, 2, 2], 3)?;
    let cases = [
        ("permuted", vec![2, 2, 2, 0, 0, 0, 1, 1, 1]),
        ("one error", vec![1, 1, 0, 0, 0, 0, 2, 2, 2]),
        ("single cluster", vec![0; 9]),
    ];
    for (name, pred) in cases {
        let pred = LabelVector::from_labels(pred)?;
        let report = EvalReport::compute(&pred, &truth)?;
        println!("{name:>14}: {}", report.to_json_line(false));
    }

    let pred = LabelVector::new(vec![1, 1, 0, 0, 0, 0, 2, 2, 2], 3)?;
    let t = contingency(&pred, &truth)?;
    println!("contingency rows {:?}, cols {:?}", t.row_sums(), t.col_sums());
    Ok(())
}
