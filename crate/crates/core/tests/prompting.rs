mod common;

use appearance_elements::container::digest_f64;
use appearance_elements::numerics::{derived_stream, init};
use appearance_elements::prompting::{
    classify_element, compose, compose_elements, element_agreement, prompt_tune, ClassifierHead,
    PromptError, PromptSet, TuneConfig,
};
use ndarray::{array, Array2};

#[test]
fn default_run_reaches_low_bce() {
    let curve = &common::tuned().curve;
    assert_eq!(curve.len(), TuneConfig::default().epochs);
    let last = *curve.last().unwrap();
    assert!(last < 0.1, "final epoch-mean BCE {last}");
}

#[test]
fn five_epoch_moving_average_never_rises() {
    let curve = &common::tuned().curve;
    let avg: Vec<f64> = curve
        .windows(5)
        .map(|w| w.iter().sum::<f64>() / 5.0)
        .collect();
    for (i, w) in avg.windows(2).enumerate() {
        assert!(w[1] <= w[0], "window {i}: {} then {}", w[0], w[1]);
    }
}

#[test]
fn populated_elements_agree_with_their_majority_label() {
    let p = common::pipeline();
    let out = common::tuned();
    let elements =
        compose_elements(&p.centroids.centroids, &out.prompts, p.partition.clone()).unwrap();
    // majority label recounted from the raw assignments
    let labels = p.set.labels();
    let mut populated = 0;
    for k in 0..common::K {
        let members: Vec<usize> = (0..labels.len())
            .filter(|&i| p.assignments[i] == k)
            .collect();
        if members.is_empty() {
            continue;
        }
        populated += 1;
        let ped = members.iter().filter(|&&i| labels[i] == 1).count();
        let majority = u8::from(2 * ped > members.len());
        let predicted = u8::from(classify_element(elements.elements.row(k), &out.head) > 0.5);
        assert_eq!(
            predicted,
            majority,
            "element {k} ({ped}/{} pedestrian)",
            members.len()
        );
    }
    assert!(populated > 0);
    let all = element_agreement(&elements, &out.head);
    let empty = common::K - populated;
    assert!(
        all >= 1.0 - empty as f64 / common::K as f64,
        "all-K agreement {all}"
    );
}

#[test]
fn trained_head_separates_the_partitions() {
    let p = common::pipeline();
    let out = common::tuned();
    let e = compose(&p.centroids.centroids, &out.prompts.prompts).unwrap();
    let mean = |idx: Vec<usize>| {
        idx.iter()
            .map(|&k| classify_element(e.row(k), &out.head))
            .sum::<f64>()
            / idx.len() as f64
    };
    let ped = mean(p.partition.pedestrian());
    let bg = mean(p.partition.background());
    assert!(ped >= 0.9, "mean over pedestrian elements {ped}");
    assert!(bg <= 0.1, "mean over background elements {bg}");
}

#[test]
fn centroids_stay_frozen() {
    let p = common::pipeline();
    let before = digest_f64(&p.centroids.centroids);
    let c = p.centroids.centroids.clone();
    let cfg = TuneConfig {
        epochs: 2,
        ..Default::default()
    };
    prompt_tune(&p.assignments, p.set.labels(), &c, &cfg).unwrap();
    assert_eq!(digest_f64(&c), before);
}

#[test]
fn prompts_of_unused_elements_stay_zero() {
    let p = common::pipeline();
    let out = common::tuned();
    let mut used = [false; common::K];
    for &a in &p.assignments {
        used[a] = true;
    }
    for (k, row) in out.prompts.prompts.rows().into_iter().enumerate() {
        if !used[k] {
            assert!(row.iter().all(|&v| v == 0.0), "element {k}");
        } else {
            assert!(row.iter().any(|&v| v != 0.0), "element {k}");
        }
    }
}

#[test]
fn prompts_only_leaves_the_head_at_init() {
    let p = common::pipeline();
    let cfg = TuneConfig {
        epochs: 3,
        prompts_only: true,
        ..Default::default()
    };
    let out = prompt_tune(&p.assignments, p.set.labels(), &p.centroids.centroids, &cfg).unwrap();
    assert_eq!(
        out.head,
        ClassifierHead::init(common::DIM, cfg.hidden, cfg.seed)
    );
    assert_ne!(
        out.prompts.prompts,
        Array2::<f64>::zeros((common::K, common::DIM))
    );
}

#[test]
fn zero_epochs_is_the_identity() {
    let p = common::pipeline();
    let cfg = TuneConfig {
        epochs: 0,
        ..Default::default()
    };
    let out = prompt_tune(&p.assignments, p.set.labels(), &p.centroids.centroids, &cfg).unwrap();
    assert_eq!(out.prompts, PromptSet::zeros(common::K, common::DIM));
    assert_eq!(
        out.head,
        ClassifierHead::init(common::DIM, cfg.hidden, cfg.seed)
    );
    let e = compose(&p.centroids.centroids, &out.prompts.prompts).unwrap();
    assert_eq!(e, p.centroids.centroids);
}

#[test]
fn tuning_is_deterministic() {
    let p = common::pipeline();
    let cfg = TuneConfig {
        epochs: 2,
        ..Default::default()
    };
    let a = prompt_tune(&p.assignments, p.set.labels(), &p.centroids.centroids, &cfg).unwrap();
    let b = prompt_tune(&p.assignments, p.set.labels(), &p.centroids.centroids, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn head_output_is_strictly_inside_the_unit_interval() {
    let head = &common::tuned().head;
    let mut rng = derived_stream(4, "test/probes", &[]);
    let probes = init::normal(
        10_000,
        common::DIM,
        1.0 / (common::DIM as f64).sqrt(),
        &mut rng,
    );
    for (i, x) in probes.rows().into_iter().enumerate() {
        let y = classify_element(x, head);
        assert!(y > 0.0 && y < 1.0, "probe {i}: {y}");
    }
}

#[test]
fn zero_head_gives_one_half() {
    let head = ClassifierHead::zeros(3, 5);
    assert_eq!(classify_element(array![0.3, -1.0, 2.0].view(), &head), 0.5);
}

#[test]
fn composition_identities() {
    let c = array![[1.0, 2.0], [3.0, -4.0]];
    let zero = Array2::<f64>::zeros((2, 2));
    assert_eq!(compose(&c, &zero).unwrap(), c);
    assert_eq!(compose(&zero, &c).unwrap(), c);
    assert_eq!(
        compose(&array![[1.0, 2.0]], &array![[0.5, -2.0]]).unwrap(),
        array![[1.5, 0.0]]
    );
}

#[test]
fn hyperparameter_and_shape_errors() {
    let c = Array2::<f64>::zeros((2, 3));
    let bad_lr = TuneConfig {
        lr: f64::NAN,
        ..Default::default()
    };
    assert!(matches!(
        prompt_tune(&[0], &[1], &c, &bad_lr),
        Err(PromptError::BadLearningRate(_))
    ));
    let zero_batch = TuneConfig {
        batch: 0,
        ..Default::default()
    };
    assert_eq!(
        prompt_tune(&[0], &[1], &c, &zero_batch),
        Err(PromptError::ZeroSize)
    );
    assert!(matches!(
        prompt_tune(&[0, 1], &[1], &c, &TuneConfig::default()),
        Err(PromptError::LengthMismatch { .. })
    ));
    assert!(matches!(
        compose(&c, &Array2::zeros((2, 4))),
        Err(PromptError::Shape { .. })
    ));
}
