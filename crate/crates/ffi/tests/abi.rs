use std::ffi::{c_char, CString};
use std::process::Command;
use std::ptr;

use ciao_core::runner::{canonical_config, run_experiment, RunManifest};
use ciao_core::train::ExperimentConfig;
use ciao_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { ciao_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

const GAME: &str = "n_agents = 3\nsingleton_values = [0.0, 0.0, 0.0]\nedges = [[0, 1, 1.0], [1, 0, 1.0], [1, 2, 0.5], [2, 1, 0.5]]\n";

#[test]
fn game_roundtrip_and_stability() {
    let text = CString::new(GAME).unwrap();
    let mut game = ptr::null_mut();
    assert_eq!(unsafe { ciao_game_from_toml(text.as_ptr(), &mut game) }, CiaoStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { ciao_game_n_agents(game, &mut n) }, CiaoStatus::Ok);
    assert_eq!(n, 3);
    let mut labels = [9u32; 3];
    let mut welfare = 0.0;
    assert_eq!(unsafe { ciao_game_max_welfare(game, labels.as_mut_ptr(), 3, &mut welfare) }, CiaoStatus::Ok);
    assert_eq!(labels, [0, 0, 0]);
    assert_eq!(welfare, 3.0);
    let mut stable = false;
    assert_eq!(unsafe { ciao_game_is_strict_core_stable(game, labels.as_ptr(), 3, &mut stable) }, CiaoStatus::Ok);
    assert!(stable);
    let singletons = [0u32, 1, 2];
    assert_eq!(unsafe { ciao_game_is_inner_stable(game, singletons.as_ptr(), 3, &mut stable) }, CiaoStatus::Ok);
    assert!(stable);
    assert_eq!(unsafe { ciao_game_is_strict_core_stable(game, singletons.as_ptr(), 3, &mut stable) }, CiaoStatus::Ok);
    assert!(!stable);
    assert_eq!(
        unsafe { ciao_game_max_welfare(game, labels.as_mut_ptr(), 2, &mut welfare) },
        CiaoStatus::BufferTooSmall
    );
    unsafe { ciao_game_free(game) };
}

#[test]
fn errors_map_to_codes() {
    let mut game = ptr::null_mut();
    assert_eq!(unsafe { ciao_game_from_toml(ptr::null(), &mut game) }, CiaoStatus::NullPointer);
    let bad = CString::new("n_agents = \"x\"").unwrap();
    assert_eq!(unsafe { ciao_game_from_toml(bad.as_ptr(), &mut game) }, CiaoStatus::Parse);
    assert!(last_error().contains("parse"));
    let neg = CString::new("n_agents = 1\nsingleton_values = [-1.0]\nedges = []\n").unwrap();
    assert_eq!(unsafe { ciao_game_from_toml(neg.as_ptr(), &mut game) }, CiaoStatus::Domain);
    assert!(game.is_null());
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { ciao_env_new(CiaoEnvKind::Lbf, 1, 0, &mut env) }, CiaoStatus::Domain);
    unsafe { ciao_game_free(ptr::null_mut()) };
}

#[test]
fn env_steps_to_horizon() {
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { ciao_env_new(CiaoEnvKind::Wolfpack, 3, 7, &mut env) }, CiaoStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { ciao_env_n_actions(env, &mut n) }, CiaoStatus::Ok);
    assert_eq!(n, 5);
    let mut ids = [0u32; 1];
    let mut len = 0;
    assert_eq!(unsafe { ciao_env_active(env, ids.as_mut_ptr(), 1, &mut len) }, CiaoStatus::BufferTooSmall);
    assert_eq!(len, 3);
    let mut ids = [0u32; 8];
    assert_eq!(unsafe { ciao_env_active(env, ids.as_mut_ptr(), 8, &mut len) }, CiaoStatus::Ok);
    assert_eq!(&ids[..3], &[0, 1, 2]);
    let mut step = CiaoStep::default();
    assert_eq!(unsafe { ciao_env_step(env, 9, &mut step) }, CiaoStatus::Domain);
    let mut steps = 0;
    while !step.done {
        assert_eq!(unsafe { ciao_env_step(env, steps % 5, &mut step) }, CiaoStatus::Ok);
        assert!(step.active_count >= 1 && step.active_count <= 3);
        steps += 1;
    }
    assert_eq!(steps, 200);
    unsafe { ciao_env_free(env) };
}

#[test]
fn learner_loads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::default();
    config.env.eps_length = 10;
    config.num_envs = 1;
    config.max_num_steps = 20;
    config.embed = 8;
    config.hidden = 8;
    config.saving_frequency = 1;
    config.eval_eps = 1;
    config.num_players_test = vec![5];
    let manifest = RunManifest::new(config.clone(), vec![0], dir.path()).unwrap();
    let out = run_experiment(&manifest).unwrap();

    let toml = CString::new(canonical_config(&config).unwrap()).unwrap();
    let path = CString::new(out[0].checkpoint.to_str().unwrap()).unwrap();
    let mut learner = ptr::null_mut();
    assert_eq!(unsafe { ciao_learner_load(toml.as_ptr(), path.as_ptr(), &mut learner) }, CiaoStatus::Ok);
    let mut ret = -1.0;
    assert_eq!(unsafe { ciao_evaluate(learner, 5, 2, 3, &mut ret) }, CiaoStatus::Ok);
    assert!(ret >= 0.0);

    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    let mut other = ptr::null_mut();
    assert_eq!(unsafe { ciao_learner_load(toml.as_ptr(), missing.as_ptr(), &mut other) }, CiaoStatus::Io);
    unsafe { ciao_learner_free(learner) };

    let mut random = -1.0;
    assert_eq!(unsafe { ciao_evaluate(ptr::null(), 3, 1, 3, &mut random) }, CiaoStatus::Ok);
    assert!(random >= 0.0);
}

#[test]
fn verify_suite_passes() {
    let mut failed = 99;
    assert_eq!(unsafe { ciao_verify(1, 4, &mut failed) }, CiaoStatus::Ok);
    assert_eq!(failed, 0);
}

#[test]
fn header_declares_exports_and_compiles() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ciao.h")).unwrap();
    for f in [
        "ciao_last_error", "ciao_game_from_toml", "ciao_game_free", "ciao_game_max_welfare",
        "ciao_game_is_strict_core_stable", "ciao_game_is_inner_stable", "ciao_env_new", "ciao_env_step",
        "ciao_env_active", "ciao_env_free", "ciao_learner_load", "ciao_learner_free", "ciao_evaluate",
        "ciao_verify",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    // syntax check with the system C compiler when one is installed
    let src = std::env::temp_dir().join("ciao_header_check.c");
    std::fs::write(&src, "#include \"ciao.h\"\nint main(void) { CiaoStep s; (void)s; return CIAO_STATUS_OK; }\n").unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    if let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-I", include]).arg(&src).status() {
        assert!(status.success());
    }
}
