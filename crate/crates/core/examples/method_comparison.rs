//! Renders a preprocessing-method comparison with percent changes against
//! the whole-page baseline.

use fraktur::eval::report::{method_comparison, MethodResult};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let results: Vec<MethodResult> = [
        ("whole page", 0.495, 0.507, 0.370, 7184),
        ("two columns", 0.572, 0.687, 0.536, 13988),
        ("segments", 0.647, 0.710, 1.050, 57186),
    ]
    .into_iter()
    .map(|(m, s, t, c, i)| MethodResult { method: m.into(), structural: s, textual: t, cost: c, input_tokens: i })
    .collect();

    println!("{:<12} {:>16} {:>16} {:>14} {:>16}", "method", "structure", "content", "cost", "input tokens");
    for row in method_comparison(&results, 0)? {
        let [m, s, t, c, i] = row.cells();
        println!("{m:<12} {s:>16} {t:>16} {c:>14} {i:>16}");
    }
    Ok(())
}
