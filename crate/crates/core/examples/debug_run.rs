use mtdc_core::sim::{load_scenario, ClosedLoopSim, CommMode, LoadedScenario};
use std::path::Path;

fn main() {
    let loaded = load_scenario(Path::new("assets/case_proportional.scn.toml")).unwrap();
    let LoadedScenario::Full(mut scenario) = loaded else {
        panic!("full scenario expected")
    };
    scenario.comm = CommMode::Periodic { period: 0.01 };
    scenario.schedule.duration = 12.0;
    let mut sim = ClosedLoopSim::new(*scenario).unwrap();
    let steps = 12_000;
    for k in 0..steps {
        let t = sim.time();
        match sim.step() {
            Ok(out) => {
                if (9990..10100).contains(&k) || k % 1000 == 0 {
                    println!(
                        "k={k} t={t:.3} u=[{:.2e} {:.2e} {:.2e} {:.2e} {:.2e} {:.2e}] y0={:.2e} vac0={:.2e} xp0={:.3e}",
                        sim.applied_setpoints()[0],
                        sim.applied_setpoints()[1],
                        sim.applied_setpoints()[2],
                        sim.applied_setpoints()[3],
                        sim.applied_setpoints()[4],
                        sim.applied_setpoints()[5],
                        out.y[0],
                        out.v_ac[0],
                        sim.state().x_p[0],
                    );
                }
            }
            Err(e) => {
                println!("FAILED at k={k} t={t:.4}: {e}");
                println!("u_applied = {:?}", sim.applied_setpoints().as_slice());
                println!("x_p = {:?}", sim.state().x_p.as_slice());
                println!("zeta_max = {:?}", sim.state().zeta_max.as_slice());
                println!("zeta_min = {:?}", sim.state().zeta_min.as_slice());
                println!("lambda_max = {:?}", sim.state().lambda_max.as_slice());
                println!("lambda_min = {:?}", sim.state().lambda_min.as_slice());
                break;
            }
        }
    }
}
