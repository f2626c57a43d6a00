use entropy_sc::amortized::EncoderParams;
use entropy_sc::data::{generate_bars, BarsSpec};
use entropy_sc::model::{Dataset, DictionaryPreimage, PosteriorKind};
use entropy_sc::optim::{
    amortized_train, em_train, eval_external_dictionary, initial_preimage, joint_train, AnnealingSchedule,
    DictionaryOptimizer, EvalOptions, TrainAlgorithm, TrainConfig,
};

fn bars() -> Dataset {
    generate_bars(&BarsSpec { n: 400, seed: 21, ..Default::default() }).unwrap().0
}

fn em_config() -> TrainConfig {
    TrainConfig {
        latents: 10,
        posterior: PosteriorKind::Diagonal,
        batch_size: 100,
        epochs: 8,
        e_step_iters: 20,
        eval_e_step_iters: 100,
        dictionary_lr: 0.01,
        dictionary_optimizer: DictionaryOptimizer::Adam,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn em_trace_is_nearly_monotone_on_bars() {
    let data = bars();
    let out = em_train(&data, &em_config(), None, None).unwrap();
    assert_eq!(out.trace.len(), 8);
    for pair in out.trace.windows(2) {
        assert!(pair[1].total_elbo >= pair[0].total_elbo - 0.5, "{} -> {}", pair[0].total_elbo, pair[1].total_elbo);
    }
    assert!(out.trace.last().unwrap().total_elbo > out.trace[0].total_elbo);
}

#[test]
fn zero_epochs_return_the_initialization() {
    let data = bars();
    let config = TrainConfig { epochs: 0, ..em_config() };
    let init = initial_preimage(data.d(), 10, 77);
    let out = em_train(&data, &config, Some(init.clone()), None).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.preimage, init);
    assert!(out.final_breakdown.unwrap().total.is_finite());
}

#[test]
fn zero_learning_rate_keeps_the_dictionary() {
    let data = bars();
    let config = TrainConfig { epochs: 1, dictionary_lr: 0.0, ..em_config() };
    let init = initial_preimage(data.d(), 10, 5);
    let out = em_train(&data, &config, Some(init.clone()), None).unwrap();
    assert_eq!(out.preimage, init);

    let config = TrainConfig { epochs: 1, encoder_lr: 0.0, ..em_config() };
    let encoder = EncoderParams::new(PosteriorKind::Diagonal, data.d(), 10, Some(12), 4).unwrap();
    let out = amortized_train(&data, &config, Some(encoder.clone()), Some(init.clone()), None).unwrap();
    assert_eq!(out.encoder.unwrap(), encoder);
    assert_eq!(out.preimage.v, init.v);
}

#[test]
fn hook_sees_every_epoch_and_can_abort() {
    let data = bars();
    let config = TrainConfig { epochs: 3, ..em_config() };
    let mut seen = Vec::new();
    let mut hook = |r: &entropy_sc::optim::TraceRow, p: &DictionaryPreimage| {
        assert_eq!(p.v.ncols(), 10);
        seen.push(r.epoch);
        if r.epoch == 2 {
            Err(entropy_sc::Error::Config(vec!["stop".into()]))
        } else {
            Ok(())
        }
    };
    assert!(em_train(&data, &config, None, Some(&mut hook)).is_err());
    assert_eq!(seen, vec![1, 2]);
}

#[test]
fn joint_training_improves_the_elbo() {
    let data = bars();
    let config = TrainConfig { algorithm: TrainAlgorithm::Joint, epochs: 3, e_step_iters: 100, ..em_config() };
    let init = initial_preimage(data.d(), 10, config.seed);
    let start = eval_external_dictionary(&init.v, &data, PosteriorKind::Diagonal, &EvalOptions { iters: 100, ..Default::default() })
        .unwrap()
        .breakdown
        .total;
    let out = joint_train(&data, &config, None, None).unwrap();
    assert_eq!(out.trace.len(), 3);
    let last = out.trace.last().unwrap().total_elbo;
    assert!(last > start, "{start} -> {last}");
    assert!(out.trace.iter().all(|r| r.gamma == 1.0 && r.delta == 1.0));
}

#[test]
fn eval_reproduces_the_trained_elbo_and_ranks_random_dictionaries_lower() {
    let data = bars();
    let config = TrainConfig { eval_e_step_iters: 400, ..em_config() };
    let out = em_train(&data, &config, None, None).unwrap();
    let trained = out.trace.last().unwrap().total_elbo;
    let options = EvalOptions { iters: 400, warm_start: out.posteriors.clone(), ..Default::default() };
    let eval = eval_external_dictionary(&out.preimage.v, &data, PosteriorKind::Diagonal, &options).unwrap();
    assert!((eval.breakdown.total - trained).abs() < 0.1, "{} vs {trained}", eval.breakdown.total);

    let random = DictionaryPreimage::random(data.d(), 10, 999).v;
    let options = EvalOptions { iters: 400, ..Default::default() };
    let rand_elbo = eval_external_dictionary(&random, &data, PosteriorKind::Diagonal, &options).unwrap().breakdown.total;
    assert!(rand_elbo < eval.breakdown.total, "{rand_elbo} vs {}", eval.breakdown.total);
}

#[test]
fn amortized_reaches_ninety_percent_of_em() {
    let data = bars();
    let em = em_train(&data, &TrainConfig { epochs: 20, ..em_config() }, None, None).unwrap();
    let f_em = em.trace.last().unwrap().total_elbo;
    let config = TrainConfig { epochs: 500, batch_size: 50, encoder_lr: 1e-3, hidden: Some(100), ..em_config() };
    let am = amortized_train(&data, &config, None, None, None).unwrap();
    let f_am = am.trace.last().unwrap().total_elbo;
    assert!(f_am >= f_em - 0.1 * f_em.abs(), "amortized {f_am} vs em {f_em}");
}

#[test]
fn annealing_changes_only_the_first_five_epochs() {
    let data = bars();
    let base = TrainConfig { epochs: 6, ..em_config() };
    let plain = em_train(&data, &base, None, None).unwrap();
    let annealed = em_train(&data, &TrainConfig { schedule: AnnealingSchedule::Prior, ..base }, None, None).unwrap();
    let gammas: Vec<f64> = annealed.trace.iter().map(|r| r.gamma).collect();
    assert_eq!(gammas, vec![8.0, 6.0, 4.0, 2.0, 1.0, 1.0]);
    assert!(plain.trace.iter().all(|r| r.gamma == 1.0 && r.delta == 1.0));
    assert!(annealed.trace.iter().all(|r| r.delta == 1.0));
}
