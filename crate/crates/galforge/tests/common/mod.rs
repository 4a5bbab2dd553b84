#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use galforge::checkpoint::{encode, load_generator, save_generator};
use galforge::config::Config;
use galforge::manifest::sha256_hex;
use galforge_core::generator::{pretrain_generator, GeneratorModel};
use galforge_core::world::{make_world, World};

pub fn default_world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| make_world(&Config::default().world_spec().unwrap()).unwrap())
}

/// The default pre-trained generator, cached under the target directory and
/// keyed by its inputs and the training code.
pub fn default_generator() -> &'static GeneratorModel {
    static G: OnceLock<GeneratorModel> = OnceLock::new();
    G.get_or_init(|| {
        let world = default_world();
        let cfg = Config::default().generator_config().unwrap();
        let mut key = format!("{:?}{:?}", world.spec, cfg).into_bytes();
        key.extend(encode(&[
            ("e", world.embeddings.class_embeddings()),
            ("t", world.embeddings.template_offsets()),
            ("x", &world.pretrain.xs),
        ]));
        for src in [
            include_str!("../../../core/src/generator.rs"),
            include_str!("../../../core/src/nn.rs"),
            include_str!("../../../core/src/autodiff.rs"),
            include_str!("../../../core/src/optim.rs"),
            include_str!("../../../core/src/tensor.rs"),
            include_str!("../../../core/src/rng.rs"),
        ] {
            key.extend(src.as_bytes());
        }
        let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("generator-{}.glt", &sha256_hex(&key)[..16]));
        if let Ok(g) = load_generator(&path) {
            return g;
        }
        let (g, _) = pretrain_generator(&world.pretrain, world.embeddings.clone(), &cfg).unwrap();
        save_generator(&path, &g).unwrap();
        g
    })
}

pub fn galforge_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_galforge"))
}

/// Small world, tiny generator and short training for fast end-to-end tests.
pub fn small_config() -> Config {
    let mut c = Config::default();
    for (k, v) in [
        ("world.pretrain_n", "1500"),
        ("world.pool_n", "300"),
        ("world.test_n", "200"),
        ("generator.steps", "10"),
        ("generator.hidden", "32x32"),
        ("generator.train_steps", "300"),
        ("generator.batch", "64"),
        ("classifier.arch", "mlp-16"),
        ("classifier.epochs", "8"),
        ("run.cycles", "3"),
        ("run.seeds", "0,1"),
        ("al.b_al", "20"),
        ("opt.steps", "3"),
        ("opt.k", "2"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

pub fn small_world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| make_world(&small_config().world_spec().unwrap()).unwrap())
}

pub fn small_generator() -> &'static GeneratorModel {
    static G: OnceLock<GeneratorModel> = OnceLock::new();
    G.get_or_init(|| {
        let w = small_world();
        pretrain_generator(&w.pretrain, w.embeddings.clone(), &small_config().generator_config().unwrap())
            .unwrap()
            .0
    })
}
