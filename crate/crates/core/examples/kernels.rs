//! The three builtin divergence kernels: criterion, conjugate and the
//! divergence of a weight vector.

use gelmem::{DivergenceKernel, KernelName};

fn main() -> gelmem::Result<()> {
    let weights = [0.5, 1.0, 1.5];
    for name in KernelName::ALL {
        let k = DivergenceKernel::builtin(name);
        println!("{}  domain ({}, {})", k.name(), k.domain_lower(), k.domain_upper());
        for s in [-0.5, 0.0, 0.5] {
            println!(
                "  s = {s:>5}: L = {:>9.6}  L' = {:>9.6}  L'' = {:>9.6}",
                k.lambda(s),
                k.lambda1(s),
                k.lambda2(s)
            );
        }
        for y in [0.5, 1.0, 2.0] {
            let c = k.conjugate(y);
            println!("  conjugate at {y}: {:.6}", c.value);
        }
        println!("  divergence of {weights:?}: {:.7}", k.divergence_value(&weights)?);
    }
    Ok(())
}
