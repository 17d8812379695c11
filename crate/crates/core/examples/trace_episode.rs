//! Print an ASCII trace of one episode.
//!
//! ```bash
//! cargo run --example trace_episode -- cramped_room pot_focused default 100 60
//! ```

use collab::env::{shipped_layout, EnvConfig};
use collab::policies::{BrLibrary, PolicyConfig, TeammateType};
use collab::rollout::Rollout;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let layout = shipped_layout(&arg(0, "cramped_room")).expect("unknown layout");
    let mate: TeammateType = arg(1, "pot_focused").parse().unwrap();
    let br: TeammateType = arg(2, "default").parse().unwrap();
    let seed: u64 = arg(3, "100").parse().unwrap();
    let steps: u32 = arg(4, "60").parse().unwrap();
    let env = EnvConfig::default();
    let controller = BrLibrary::default().respond(br);
    let mut r = Rollout::new(
        layout,
        mate,
        controller,
        seed,
        &env,
        &PolicyConfig::default(),
    );
    for _ in 0..steps {
        let s = r.step().unwrap();
        println!(
            "teammate {:?} ({:?})  controlled {:?}",
            s.teammate_action,
            r.teammate.current_subtask(),
            s.controlled_action
        );
        print!("{}", r.state.render());
    }
    println!("return = {}", r.total_reward);
}
