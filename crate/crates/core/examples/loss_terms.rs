//! Loss terms at calibration points and the weighted totals.

use fedmed::losses::{
    adversarial_loss_d, adversarial_loss_g, aux_rotation_loss, aux_scaling_loss, total_discriminator_loss,
    total_generator_loss, LossComponents, LossWeights,
};

fn main() -> fedmed::Result<()> {
    println!("uniform rotation logits:   {:.6} (ln 4 = {:.6})", aux_rotation_loss(&[[0.0; 4]], &[2], 1.0)?, 4f64.ln());
    println!("uniform scale logits:      {:.6} (ln 3 = {:.6})", aux_scaling_loss(&[[0.0; 3]], &[1], 1.0)?, 3f64.ln());
    println!("D at 0.5 everywhere:       {:.6} (2 ln 2 = {:.6})", adversarial_loss_d(&[0.5], &[0.5]), 2.0 * 2f64.ln());
    println!("G, fakes judged 0.9 real:  {:.6}", adversarial_loss_g(&[0.9]));
    let ones = LossComponents { adv: 1.0, cyc: 1.0, rot: 1.0, trans: 1.0, scale: 1.0 };
    println!("generator total, all ones: {}", total_generator_loss(&ones, &LossWeights::GENERATOR));
    println!("discriminator total:       {}", total_discriminator_loss(&ones, &LossWeights::DISCRIMINATOR));
    Ok(())
}
