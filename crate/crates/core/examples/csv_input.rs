//! Reading observations from CSV with a header and named columns, then
//! estimating the IV model.

use gelmem::estimator::estimate;
use gelmem::sample::{read_csv_from, ColumnRef, CsvOptions};
use gelmem::{builtin_model, DivergenceKernel, KernelName, ModelParams, SolverOptions};

const DATA: &str = "id,y,w,z1,z2
1,1.9,1.1,0.8,0.3
2,0.2,-0.1,-0.5,0.4
3,3.1,1.8,1.2,1.1
4,-0.7,-0.6,-0.9,-0.2
5,1.2,0.5,0.1,0.9
6,2.4,1.3,1.0,0.2
7,-1.5,-1.0,-1.1,-0.8
8,0.9,0.6,0.4,-0.3
";

fn main() -> gelmem::Result<()> {
    let opts = CsvOptions {
        header: None,
        columns: ["y", "w", "z1", "z2"].map(|c| ColumnRef::Name(c.into())).to_vec(),
    };
    let sample = read_csv_from(DATA.as_bytes(), &opts)?;
    let model = builtin_model(
        "linear-iv",
        &ModelParams {
            d: Some(1),
            k: Some(2),
            ..Default::default()
        },
    )?;
    let r = estimate(&model, &sample, &DivergenceKernel::builtin(KernelName::QuadraticCue), &SolverOptions::default())?;
    print!("{r}");
    Ok(())
}
