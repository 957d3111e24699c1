use cmdp_lab::instances::HardInstanceParams;
use cmdp_lab::lp::{concentrability, slater_margin};
use cmdp_lab::NumericConfig;

fn main() {
    let tol = &NumericConfig::DEFAULT;
    let params = HardInstanceParams::random(4, 3, 8, 2.0, 0.5, 0.5, 0.5, 9).unwrap();
    let inst = cmdp_lab::instances::build_hard_cmdp(&params, tol).unwrap();
    let phi = slater_margin(&inst.model, tol).unwrap();
    let psi = concentrability(&inst.model, &inst.mu, tol).unwrap();
    println!("phi = {phi:.6}, concentrability = {psi:.6}");
}
