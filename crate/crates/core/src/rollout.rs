//! Stepping a scripted teammate together with a best-response controller.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{observe, reset, step, EnvConfig, EnvError, GridState, Layout};
use crate::fingerprint::{ProbeHistory, ProbeStep};
use rayon::prelude::*;

use crate::policies::{
    BestResponse, BrChoice, BrLibrary, BrStyle, Opening, PolicyConfig, TeammatePolicy, TeammateType,
};

/// Generator driving the teammate at step `t` of episode `seed`. Keyed by
/// step so that episodes sharing a seed see the same draws at the same time
/// even after their trajectories diverge.
pub fn teammate_rng(seed: u64, t: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

/// One live episode. The controller can be re-targeted between steps.
pub struct Rollout {
    pub state: GridState,
    pub teammate: TeammatePolicy,
    pub controller: BestResponse,
    seed: u64,
    env: EnvConfig,
    pub total_reward: f64,
    pub deliveries: u32,
}

impl Rollout {
    pub fn new(
        layout: Arc<Layout>,
        teammate: TeammateType,
        controller: BestResponse,
        seed: u64,
        env: &EnvConfig,
        policy: &PolicyConfig,
    ) -> Rollout {
        Rollout {
            state: reset(layout, env, seed),
            teammate: TeammatePolicy::new(teammate, policy),
            controller,
            seed,
            env: env.clone(),
            total_reward: 0.0,
            deliveries: 0,
        }
    }

    pub fn t(&self) -> u32 {
        self.state.t
    }

    pub fn done(&self) -> bool {
        self.state.t >= self.env.horizon
    }

    /// Advance one joint step and return what happened.
    pub fn step(&mut self) -> Result<ProbeStep, EnvError> {
        let teammate_obs = observe(&self.state, 0);
        let mut rng = teammate_rng(self.seed, self.state.t);
        let a0 = self.teammate.act(&teammate_obs, &mut rng);
        let a1 = self.controller.act(&observe(&self.state, 1));
        let out = step(&self.state, [a0, a1], &self.env)?;
        self.total_reward += out.reward;
        self.deliveries += out.events.iter().filter(|e| e.delivered).count() as u32;
        self.state = out.state;
        Ok(ProbeStep {
            obs: teammate_obs,
            teammate_action: a0,
            controlled_action: a1,
            reward: out.reward,
            events: out.events,
        })
    }

    /// Run `steps` steps, collecting them as a probe history.
    pub fn probe(&mut self, steps: u32) -> Result<ProbeHistory, EnvError> {
        let mut history = ProbeHistory::default();
        for _ in 0..steps {
            history.push(self.step()?);
        }
        Ok(history)
    }

    pub fn finish(&mut self) -> Result<(), EnvError> {
        while !self.done() {
            self.step()?;
        }
        Ok(())
    }
}

/// Probe window of `steps` steps with the controller playing the best
/// response to the default teammate.
pub fn run_probe(
    layout: Arc<Layout>,
    teammate: TeammateType,
    steps: u32,
    seed: u64,
    env: &EnvConfig,
    policy: &PolicyConfig,
    library: &BrLibrary,
) -> Result<ProbeHistory, EnvError> {
    let probe = library.respond(TeammateType::Default);
    Rollout::new(layout, teammate, probe, seed, env, policy).probe(steps)
}

/// Full episode with a fixed controller; returns the episodic return.
pub fn run_fixed(
    layout: Arc<Layout>,
    teammate: TeammateType,
    controller: BestResponse,
    seed: u64,
    env: &EnvConfig,
    policy: &PolicyConfig,
) -> Result<f64, EnvError> {
    let mut r = Rollout::new(layout, teammate, controller, seed, env, policy);
    r.finish()?;
    Ok(r.total_reward)
}

/// Mean return of `controller` against `teammate` over `seeds`.
pub fn mean_return(
    layout: &Arc<Layout>,
    teammate: TeammateType,
    controller: BestResponse,
    seeds: &[u64],
    env: &EnvConfig,
    policy: &PolicyConfig,
) -> Result<f64, EnvError> {
    let mut total = 0.0;
    for &seed in seeds {
        total += run_fixed(layout.clone(), teammate, controller, seed, env, policy)?;
    }
    Ok(total / seeds.len().max(1) as f64)
}

/// Candidate best responses: every stationary style, then every style
/// preceded by an opening of `opening_steps` steps in `opening_style`.
fn candidates(opening_style: BrStyle, opening_steps: u32) -> Vec<BrChoice> {
    let mut out: Vec<BrChoice> = BrStyle::ALL.into_iter().map(BrChoice::stationary).collect();
    if opening_steps > 0 {
        for style in BrStyle::ALL {
            if style != opening_style {
                out.push(BrChoice {
                    style,
                    opening: Some(Opening {
                        style: opening_style,
                        steps: opening_steps,
                    }),
                });
            }
        }
    }
    out
}

fn best_of(
    layout: &Arc<Layout>,
    teammate: TeammateType,
    options: &[BrChoice],
    seeds: &[u64],
    env: &EnvConfig,
    policy: &PolicyConfig,
) -> Result<BrChoice, EnvError> {
    let means = options
        .par_iter()
        .map(|&c| {
            mean_return(
                layout,
                teammate,
                BestResponse::new(teammate, c),
                seeds,
                env,
                policy,
            )
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let mut best = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[best] {
            best = i;
        }
    }
    Ok(options[best])
}

/// Picks each type's best response by mean return on `seeds`. The default
/// type is answered by the best stationary style; every other type may also
/// keep that style as an opening for `opening_steps` steps before switching.
/// Ties go to the earlier candidate.
pub fn calibrate_library(
    layout: &Arc<Layout>,
    seeds: &[u64],
    opening_steps: u32,
    env: &EnvConfig,
    policy: &PolicyConfig,
) -> Result<BrLibrary, EnvError> {
    let stationary: Vec<BrChoice> = BrStyle::ALL.into_iter().map(BrChoice::stationary).collect();
    let default = best_of(
        layout,
        TeammateType::Default,
        &stationary,
        seeds,
        env,
        policy,
    )?;
    let options = candidates(default.style, opening_steps);
    let mut library = BrLibrary::default();
    library.choices.insert(TeammateType::Default, default);
    for ty in TeammateType::ALL.into_iter().skip(1) {
        library
            .choices
            .insert(ty, best_of(layout, ty, &options, seeds, env, policy)?);
    }
    Ok(library)
}
