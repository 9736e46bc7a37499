//! C ABI over `ciao-core`.
//!
//! Every function returns a [`CiaoStatus`]; results come back through out
//! pointers. Objects are opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. The message of the
//! last failure on the calling thread is available from
//! [`ciao_last_error`]. Panics are caught at the boundary and reported as
//! [`CiaoStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ciao_core::cag::{AffinityGame, CoalitionStructure};
use ciao_core::nn::Checkpoint;
use ciao_core::train::{evaluate, ExperimentConfig, Learner};
use ciao_core::world::{EnvConfig, EnvKind, OpenWorld};
use ciao_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CiaoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    Capacity = 4,
    Shape = 5,
    Numeric = 6,
    State = 7,
    Parse = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CiaoEnvKind {
    Wolfpack = 0,
    Lbf = 1,
}

/// Outcome of one environment step.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CiaoStep {
    pub reward: f64,
    pub team_reward: f64,
    pub done: bool,
    pub active_count: usize,
}

/// Opaque coalitional affinity game.
pub struct CiaoGame(AffinityGame);

/// Opaque open-team environment.
pub struct CiaoEnv(OpenWorld);

/// Opaque trained learner with its experiment config.
pub struct CiaoLearner {
    learner: Learner,
    config: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CiaoStatus {
    match e {
        Error::Domain(_) => CiaoStatus::Domain,
        Error::Capacity { .. } => CiaoStatus::Capacity,
        Error::Shape { .. } => CiaoStatus::Shape,
        Error::Numeric(_) => CiaoStatus::Numeric,
        Error::State(_) => CiaoStatus::State,
        Error::Parse(_) => CiaoStatus::Parse,
        Error::Io { .. } => CiaoStatus::Io,
    }
}

/// Failure inside a call: either a library error or a bad argument.
struct Fail(CiaoStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CiaoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CiaoStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside ciao".into());
            CiaoStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail(CiaoStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CiaoStatus::InvalidUtf8, "string argument is not UTF-8".into()))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(null)
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

unsafe fn labels_arg(labels: *const u32, n: usize) -> Result<Vec<usize>, Fail> {
    if labels.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(labels, n).iter().map(|&l| l as usize).collect())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
#[no_mangle]
pub unsafe extern "C" fn ciao_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses a game file (TOML with `n_agents`, `singleton_values`, `edges`).
#[no_mangle]
pub unsafe extern "C" fn ciao_game_from_toml(text: *const c_char, game: *mut *mut CiaoGame) -> CiaoStatus {
    guard(|| {
        let slot = out(game)?;
        let g = AffinityGame::from_toml(str_arg(text)?)?;
        *slot = Box::into_raw(Box::new(CiaoGame(g)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ciao_game_free(game: *mut CiaoGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ciao_game_n_agents(game: *const CiaoGame, n: *mut usize) -> CiaoStatus {
    guard(|| {
        *out(n)? = handle(game)?.0.n_agents();
        Ok(())
    })
}

/// Writes a welfare-maximizing partition as one coalition label per agent
/// (`labels` must hold `n_agents` entries) and its welfare.
#[no_mangle]
pub unsafe extern "C" fn ciao_game_max_welfare(
    game: *const CiaoGame,
    labels: *mut u32,
    n: usize,
    welfare: *mut f64,
) -> CiaoStatus {
    guard(|| {
        let g = &handle(game)?.0;
        let w = out(welfare)?;
        if labels.is_null() {
            return Err(null());
        }
        if n < g.n_agents() {
            return Err(Fail(CiaoStatus::BufferTooSmall, format!("labels needs {} entries", g.n_agents())));
        }
        let (cs, value) = g.max_social_welfare_partition()?;
        let dst = std::slice::from_raw_parts_mut(labels, n);
        for (c, part) in cs.parts().iter().enumerate() {
            for j in part.members() {
                dst[j] = c as u32;
            }
        }
        *w = value;
        Ok(())
    })
}

/// Stability of the partition given as coalition labels (restricted-growth
/// or any labelling with one label per agent).
#[no_mangle]
pub unsafe extern "C" fn ciao_game_is_strict_core_stable(
    game: *const CiaoGame,
    labels: *const u32,
    n: usize,
    stable: *mut bool,
) -> CiaoStatus {
    guard(|| {
        let g = &handle(game)?.0;
        let cs = CoalitionStructure::from_labels(&labels_arg(labels, n)?)?;
        *out(stable)? = g.is_strict_core_stable(&cs)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ciao_game_is_inner_stable(
    game: *const CiaoGame,
    labels: *const u32,
    n: usize,
    stable: *mut bool,
) -> CiaoStatus {
    guard(|| {
        let g = &handle(game)?.0;
        let cs = CoalitionStructure::from_labels(&labels_arg(labels, n)?)?;
        *out(stable)? = g.is_inner_stable(&cs)?;
        Ok(())
    })
}

/// Creates an environment with the default settings of `kind`.
#[no_mangle]
pub unsafe extern "C" fn ciao_env_new(
    kind: CiaoEnvKind,
    max_agents: usize,
    seed: u64,
    env: *mut *mut CiaoEnv,
) -> CiaoStatus {
    guard(|| {
        let slot = out(env)?;
        let kind = match kind {
            CiaoEnvKind::Wolfpack => EnvKind::Wolfpack,
            CiaoEnvKind::Lbf => EnvKind::Lbf,
        };
        let (world, _) = OpenWorld::reset(EnvConfig::for_kind(kind, max_agents), seed)?;
        *slot = Box::into_raw(Box::new(CiaoEnv(world)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ciao_env_free(env: *mut CiaoEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ciao_env_n_actions(env: *const CiaoEnv, n: *mut usize) -> CiaoStatus {
    guard(|| {
        *out(n)? = handle(env)?.0.config().n_actions();
        Ok(())
    })
}

/// Writes the active agent ids (learner first) into `ids` and their count
/// into `len`. Fails with `BufferTooSmall` (and still sets `len`) when
/// `cap` is too small.
#[no_mangle]
pub unsafe extern "C" fn ciao_env_active(
    env: *const CiaoEnv,
    ids: *mut u32,
    cap: usize,
    len: *mut usize,
) -> CiaoStatus {
    guard(|| {
        let active = handle(env)?.0.active();
        *out(len)? = active.len();
        if active.len() > cap {
            return Err(Fail(CiaoStatus::BufferTooSmall, format!("need room for {} ids", active.len())));
        }
        if ids.is_null() {
            return Err(null());
        }
        let dst = std::slice::from_raw_parts_mut(ids, cap);
        for (d, id) in dst.iter_mut().zip(active) {
            *d = id as u32;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ciao_env_step(env: *mut CiaoEnv, action: usize, step: *mut CiaoStep) -> CiaoStatus {
    guard(|| {
        let world = &mut env.as_mut().ok_or_else(null)?.0;
        let dst = out(step)?;
        let o = world.step(action)?;
        *dst = CiaoStep {
            reward: o.reward,
            team_reward: o.team_reward,
            done: o.done,
            active_count: o.next.active.len(),
        };
        Ok(())
    })
}

/// Loads a learner from an experiment config (TOML text, may be empty for
/// defaults) and a checkpoint file written by the trainer.
#[no_mangle]
pub unsafe extern "C" fn ciao_learner_load(
    config_toml: *const c_char,
    checkpoint_path: *const c_char,
    learner: *mut *mut CiaoLearner,
) -> CiaoStatus {
    guard(|| {
        let slot = out(learner)?;
        let config: ExperimentConfig =
            toml::from_str(str_arg(config_toml)?).map_err(|e| Fail(CiaoStatus::Parse, e.to_string()))?;
        config.validate()?;
        let ck = Checkpoint::load(Path::new(str_arg(checkpoint_path)?))?;
        let l = Learner::from_checkpoint(&config, &ck)?;
        *slot = Box::into_raw(Box::new(CiaoLearner { learner: l, config }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ciao_learner_free(learner: *mut CiaoLearner) {
    if !learner.is_null() {
        drop(Box::from_raw(learner));
    }
}

/// Mean shifted return of the greedy learner over `episodes` episodes with at
/// most `max_agents` agents. A null `learner` evaluates a uniform-random
/// learner under the default config.
#[no_mangle]
pub unsafe extern "C" fn ciao_evaluate(
    learner: *const CiaoLearner,
    max_agents: usize,
    episodes: usize,
    seed: u64,
    mean_return: *mut f64,
) -> CiaoStatus {
    guard(|| {
        let dst = out(mean_return)?;
        let default = ExperimentConfig::default();
        let (l, config) = match learner.as_ref() {
            Some(h) => (Some(&h.learner), &h.config),
            None => (None, &default),
        };
        *dst = evaluate(l, &config.test_env(max_agents), episodes, seed, config.embed)?;
        Ok(())
    })
}

/// Runs the exhaustive verification suite; `failed` receives the number of
/// property families with at least one violation.
#[no_mangle]
pub unsafe extern "C" fn ciao_verify(seed: u64, instances: usize, failed: *mut usize) -> CiaoStatus {
    guard(|| {
        let dst = out(failed)?;
        let checks = ciao_core::runner::verify(seed, instances)?;
        *dst = checks.iter().filter(|c| !c.ok()).count();
        Ok(())
    })
}
