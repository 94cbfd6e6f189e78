use rapgnn::artifact::{config_digest, ArtifactError, ModelArtifact, MAGIC};
use rapgnn_core::data::Dataset;
use rapgnn_core::datasets::{sbm_node_dataset, SbmSpec};
use rapgnn_core::model::{EmbeddingKind, Model, ModelConfig, Prepared};
use rapgnn_core::params::ParamSet;
use rapgnn_core::propagation::{Backbone, SamplingPolicy, WeightMode};
use rapgnn_core::train::{fit, NoClock, PretrainedEmbedding};

fn config(mode: WeightMode, backbone: Backbone) -> ModelConfig {
    ModelConfig {
        mode,
        backbone,
        layers: 2,
        hidden: 8,
        epochs: 5,
        epochs_pre: 5,
        classifier_layers: 2,
        ..ModelConfig::default()
    }
}

fn data() -> Dataset {
    Dataset::Node(sbm_node_dataset(&SbmSpec::balanced(3, 15, 0.3, 0.02, 5, 1), 3, 6, 9).unwrap())
}

fn prepared(d: &Dataset, backbone: Backbone) -> Prepared {
    let Dataset::Node(n) = d else { unreachable!() };
    Prepared::node(&n.graph, backbone)
}

#[test]
fn trained_models_round_trip_exactly() {
    let d = data();
    for (mode, backbone) in [
        (WeightMode::OnTheFlyDiagonal, Backbone::Gcn),
        (WeightMode::FixedFull, Backbone::Gin),
        (WeightMode::Learned, Backbone::Gcn),
        (WeightMode::Identity, Backbone::Gin),
    ] {
        let out = fit(&config(mode, backbone), &d, None, &mut NoClock).unwrap();
        let art = ModelArtifact::from_model(&out.model);
        let bytes = art.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = ModelArtifact::from_bytes(&bytes).unwrap();
        assert_eq!(back, art);
        assert_eq!(back.to_bytes(), bytes);

        // a rebuilt model starts its weight draws where a fresh one would
        let mut restored = back.to_model().unwrap();
        let mut fresh = Model::new(out.model.config.clone(), art.in_dim, art.out_dim).unwrap();
        fresh.params = out.model.params.clone();
        let prep = prepared(&d, backbone);
        assert_eq!(restored.predict(&prep.inputs()).unwrap(), fresh.predict(&prep.inputs()).unwrap());
    }
}

#[test]
fn pretrained_embedding_loads_into_a_new_model() {
    let d = data();
    let out = fit(&config(WeightMode::OnTheFlyDiagonal, Backbone::Gcn), &d, None, &mut NoClock).unwrap();
    let art = ModelArtifact::from_model(&out.model);
    let emb = art.pretrained_embedding().unwrap();
    assert_eq!(emb, PretrainedEmbedding::from_model(&out.model).unwrap());

    let cfg = ModelConfig { embedding: EmbeddingKind::Pretrained("embedding.bin".into()), ..out.model.config.clone() };
    let reuse = fit(&cfg, &d, Some(&emb), &mut NoClock).unwrap();
    assert!(reuse.pretrain.is_none());
    let saved = ModelArtifact::from_model(&reuse.model);
    assert_eq!(saved.embedding, EmbeddingKind::Mlp(1));
    let back = ModelArtifact::from_bytes(&saved.to_bytes()).unwrap().to_model().unwrap();
    assert_eq!(back.params, reuse.model.params);

    let identity = ModelArtifact::from_model(&Model::new(ModelConfig { embedding: EmbeddingKind::Identity, hidden: 5, ..cfg }, 5, 3).unwrap());
    assert!(matches!(identity.pretrained_embedding(), Err(ArtifactError::Header(_))));
}

#[test]
fn corrupted_artifacts_are_rejected() {
    let model = Model::new(config(WeightMode::Learned, Backbone::Gcn), 5, 3).unwrap();
    let bytes = ModelArtifact::from_model(&model).to_bytes();

    let mut magic = bytes.clone();
    magic[0] ^= 1;
    assert!(matches!(ModelArtifact::from_bytes(&magic), Err(ArtifactError::BadMagic)));

    let mut version = bytes.clone();
    version[8] = 9;
    assert!(matches!(ModelArtifact::from_bytes(&version), Err(ArtifactError::Version(9))));

    let mut header = bytes.clone();
    header[20] ^= 0x20;
    assert!(matches!(ModelArtifact::from_bytes(&header), Err(ArtifactError::Digest)));

    for cut in (0..bytes.len()).step_by(37) {
        assert!(ModelArtifact::from_bytes(&bytes[..cut]).is_err(), "prefix of {} bytes accepted", cut);
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(ModelArtifact::from_bytes(&trailing), Err(ArtifactError::Header(_))));
}

#[test]
fn mismatched_tensors_are_rejected() {
    let model = Model::new(config(WeightMode::Learned, Backbone::Gcn), 5, 3).unwrap();
    let art = ModelArtifact::from_model(&model);

    let mut missing = art.clone();
    let mut fewer = ParamSet::new();
    for (_, name, value) in art.params.iter().skip(1) {
        fewer.add(name, value.clone());
    }
    missing.params = fewer;
    assert!(matches!(missing.to_model(), Err(ArtifactError::Tensor(..))));

    let mut wide = art.clone();
    wide.in_dim = 6;
    assert!(matches!(wide.to_model(), Err(ArtifactError::Tensor(..))));
}

#[test]
fn config_digest_tracks_every_field() {
    let a = ModelConfig::default();
    assert_eq!(config_digest(&a), config_digest(&a.clone()));
    assert_eq!(config_digest(&a).len(), 64);
    let b = ModelConfig { policy: SamplingPolicy::Fixed(1), ..a.clone() };
    assert_ne!(config_digest(&a), config_digest(&b));
}
