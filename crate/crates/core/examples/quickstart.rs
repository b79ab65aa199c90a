//! Multiply two numbers with the exact rule, and with a trained checkpoint
//! if one is given.
//!
//!     cargo run --release -p ncamul --example quickstart -- 12345 6789 [nca.json]

use ncamul::model::checkpoint::{self, AnyModel};
use ncamul::model::{Engine, Stepper};
use ncamul::rule::{default_step_cap, multiply_with_rule};
use ncamul::{decode_product, outer_product_encode, BitVec};

fn main() -> ncamul::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let a = BitVec::from_decimal_str(args.first().map_or("12345", String::as_str))?;
    let b = BitVec::from_decimal_str(args.get(1).map_or("6789", String::as_str))?;

    let (product, steps) = multiply_with_rule(&a, &b)?;
    println!("exact rule:   {a} x {b} = {product} in {steps} steps");

    if let Some(path) = args.get(2) {
        let n = a.len().max(b.len()).max(1);
        let g0 = outer_product_encode(&a, &b, n)?;
        let (g, steps) = match checkpoint::load(path.as_ref())?.model {
            AnyModel::Nca(m) => Engine::new(&m).run(&g0, default_step_cap(n))?,
            AnyModel::Mlp(m) => Engine::new(&m).run(&g0, default_step_cap(n))?,
        };
        println!("learned rule: {a} x {b} = {} in {steps} steps", decode_product(&g)?);
    }
    Ok(())
}
