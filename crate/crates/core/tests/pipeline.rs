//! End-to-end flow through the public API: synthetic bars in, trained
//! policy out, metrics and checkpoint round trips on the way.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xtrader_core::checkpoint;
use xtrader_core::data::{generate_bars, AlignedPanel, SynthConfig, TurbulenceSeries};
use xtrader_core::env::{EnvConfig, TradingEnv};
use xtrader_core::metrics::PerformanceReport;
use xtrader_core::metrics::count_trades;
use xtrader_core::policy::{Policy, PolicyConfig};
use xtrader_core::ppo::{evaluate_policy, TrainConfig, Trainer};
use xtrader_core::xlstm::{BlockStackConfig, CellKind};

const WINDOW: usize = 5;

/// Two synthetic tickers, normalization fitted on the first 60 days.
fn fitted_panel() -> (AlignedPanel, TurbulenceSeries) {
    let per_ticker: Vec<(String, Vec<_>)> = ["AAA", "BBB"]
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let bars = generate_bars(&SynthConfig {
                n_days: 90,
                seed: 17 + i as u64,
                drift: 0.001,
                volatility: 0.015,
                ..SynthConfig::default()
            })
            .unwrap();
            (name.to_string(), bars)
        })
        .collect();
    let mut panel = AlignedPanel::align(&per_ticker).unwrap();
    panel.fit_normalization(0, 59).unwrap();
    let turbulence = TurbulenceSeries::from_panel(&panel, 0, 59, 99.0).unwrap();
    (panel, turbulence)
}

fn small_policy(panel: &AlignedPanel, seed: u64) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Policy::new(
        PolicyConfig {
            obs_dim: panel.observation_len(WINDOW),
            n_actions: panel.n_tickers(),
            stack: BlockStackConfig {
                embedding_dim: 8,
                layers: vec![CellKind::MLstm, CellKind::SLstm],
                n_heads: 1,
                mlp_expansion: 1.0,
                ln_eps: 1e-12,
            },
        },
        &mut rng,
    )
    .unwrap()
}

#[test]
fn train_backtest_report_round_trip() {
    let (panel, turbulence) = fitted_panel();
    let env_config = EnvConfig {
        turbulence_threshold: turbulence.threshold(),
        ..EnvConfig::default()
    };
    let train_env =
        TradingEnv::new(env_config.clone(), &panel, &turbulence, (0, 59), WINDOW).unwrap();
    let config = TrainConfig {
        total_timesteps: 110,
        batch_size: 16,
        epochs: 2,
        seq_len: WINDOW,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, train_env, small_policy(&panel, 3)).unwrap();
    let history = trainer.train().unwrap();
    assert!(!history.is_empty());
    assert!(history.iter().all(|u| u.policy_loss.is_finite() && u.value_loss.is_finite()));

    // Held-out backtest with the five-metric report.
    let mut test_env =
        TradingEnv::new(env_config.clone(), &panel, &turbulence, (60, 89), WINDOW).unwrap();
    let (curve, steps) = evaluate_policy(&mut test_env, trainer.policy()).unwrap();
    assert_eq!(curve.values[0], env_config.initial_balance);
    assert_eq!(curve.values.len(), steps.len() + 1);
    let report = PerformanceReport::from_curve(&curve, count_trades(&steps)).unwrap();
    assert!(report.cr.is_finite());
    assert!(report.mer >= report.cr);
    assert!(report.mpb >= 0.0);

    // Checkpointed weights must reproduce the backtest exactly.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weights.bin");
    checkpoint::save(&path, &trainer.policy().params()).unwrap();
    let restored = small_policy(&panel, 99);
    checkpoint::load(&path, &restored.params()).unwrap();
    let mut test_env =
        TradingEnv::new(env_config, &panel, &turbulence, (60, 89), WINDOW).unwrap();
    let (curve_again, _) = evaluate_policy(&mut test_env, &restored).unwrap();
    assert_eq!(curve.values, curve_again.values);
}

#[test]
fn turbulence_gate_halts_trading_end_to_end() {
    let (panel, turbulence) = fitted_panel();
    // Gate low enough that measurable turbulence always fires.
    let env_config = EnvConfig {
        turbulence_threshold: 1e-12,
        ..EnvConfig::default()
    };
    let mut env = TradingEnv::new(env_config, &panel, &turbulence, (0, 89), WINDOW).unwrap();
    env.reset().unwrap();
    let buy = vec![1.0; panel.n_tickers()];
    let mut halted = 0;
    while !env.is_done() {
        let result = env.step(&buy).unwrap();
        if result.info.turbulent {
            halted += 1;
            assert_eq!(result.reward, -1.0);
            assert!(result.info.executed.iter().all(|e| *e == 0));
        }
    }
    assert!(halted > 0, "no turbulent day in the synthetic stream");
}
