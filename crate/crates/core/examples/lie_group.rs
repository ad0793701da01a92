//! Sim(3) exponential and logarithm, composition, and the manifold update.

use nalgebra::Vector3;
use submap_slam::lie::{sim3_manifold_update, Sim3State, Sim3Tangent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let v = Sim3Tangent::new(Vector3::new(0.3, -0.2, 0.9), Vector3::new(4.0, 1.0, -2.0), 0.4);
    let g = v.exp();
    let back = g.log()?;
    println!("scale {:.4}  translation {:.4?}", g.scale, g.translation.as_slice());
    println!("log(exp(v)) - v = {:.2e}", (back.to_vector() - v.to_vector()).norm());

    let h = Sim3Tangent::new(Vector3::new(-0.1, 0.0, 0.2), Vector3::new(0.0, 3.0, 0.0), -0.1).exp();
    let x = Vector3::new(1.0, 2.0, 3.0);
    // compose applies the left operand first
    let gh = g.compose(&h);
    println!("compose vs sequential apply: {:.2e}", (gh.apply(&x) - h.apply(&g.apply(&x))).norm());
    println!("g * g^-1 deviation: {:.2e}", (g.compose(&g.inverse()).to_matrix() - nalgebra::Matrix4::identity()).norm());

    let state = Sim3State::from_group(g)?;
    let step = Sim3Tangent::new(Vector3::new(0.0, 0.0, 0.01), Vector3::zeros(), 0.05);
    let next = sim3_manifold_update(&state, &step)?;
    println!("after update: scale {:.4} -> {:.4}", state.group.scale, next.group.scale);
    Ok(())
}
