//! Mean episodic return of every controller style against every teammate
//! type, and the best response each type ends up with after calibration.
//!
//! ```bash
//! cargo run --release --example policy_pairings -- [episodes]
//! ```

use collab::env::{shipped_layout, EnvConfig, SHIPPED_LAYOUTS};
use collab::policies::{BestResponse, BrChoice, BrStyle, PolicyConfig, TeammateType};
use collab::rollout::{calibrate_library, mean_return};

fn main() {
    let episodes: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let env = EnvConfig::default();
    let policy = PolicyConfig::default();
    let seeds: Vec<u64> = (0..episodes).map(|s| 900_000 + s).collect();
    for name in SHIPPED_LAYOUTS {
        let layout = shipped_layout(name).unwrap();
        let library = calibrate_library(&layout, &seeds, 20, &env, &policy).unwrap();
        println!("\n{name}: rows = teammate, columns = controller style");
        print!("{:>14}", "");
        for style in BrStyle::ALL {
            let label = style.as_str();
            print!("{:>14}", &label[..label.len().min(13)]);
        }
        println!("   chosen");
        for mate in TeammateType::ALL {
            print!("{:>14}", mate.as_str());
            for style in BrStyle::ALL {
                let br = BestResponse::new(mate, BrChoice::stationary(style));
                let mean = mean_return(&layout, mate, br, &seeds, &env, &policy).unwrap();
                print!("{mean:>14.1}");
            }
            let choice = library.choice(mate);
            match choice.opening {
                Some(o) => println!(
                    "   {} after {} steps of {}",
                    choice.style.as_str(),
                    o.steps,
                    o.style.as_str()
                ),
                None => println!("   {}", choice.style.as_str()),
            }
        }
    }
}
