//! Tour of the tape engine: record a forward pass, run backward, check the
//! analytic gradients against central finite differences.
//!
//! Run: cargo run --release -p dmwat --example autodiff_basics

use dmwat::tensor::{gradcheck, ParamSet, Tape, Tensor};

fn main() -> dmwat::Result<()> {
    // forward: loss = mean(softmax(x W + b) cross-entropy target)
    let mut params = ParamSet::new();
    let w = params.add("w", Tensor::new(&[3, 3], vec![0.2, -0.4, 0.1, 0.7, 0.3, -0.2, 0.05, 0.9, -0.6])?);
    let b = params.add("b", Tensor::row(&[0.1, -0.1, 0.0]));

    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let x = tape.constant(Tensor::new(&[2, 3], vec![1.0, 0.5, -0.25, 0.0, 1.5, 0.75])?);
    let z = tape.matmul(x, binding.var(w))?;
    let z = tape.add(z, binding.var(b))?;
    let target = Tensor::new(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0])?;
    let loss = tape.cross_entropy(z, &target)?;
    println!("loss = {:.6}", tape.value(loss).item());

    tape.backward(loss)?;
    binding.harvest(&tape, &mut params);
    println!("dL/db = {:?}", params.grad(b).unwrap());

    // the same loss as a closure, checked against finite differences
    let report = gradcheck(&mut params, 1e-5, |tape, binding| {
        let x = tape.constant(Tensor::new(&[2, 3], vec![1.0, 0.5, -0.25, 0.0, 1.5, 0.75])?);
        let z = tape.matmul(x, binding.var(w))?;
        let z = tape.add(z, binding.var(b))?;
        let target = Tensor::new(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0])?;
        tape.cross_entropy(z, &target)
    })?;
    println!(
        "gradcheck: {} scalars checked, max relative error {:.3e} (worst: {})",
        report.checked, report.max_rel_err, report.worst_param
    );
    assert!(report.max_rel_err < 1e-6);
    Ok(())
}
