use std::path::PathBuf;

use byseer_core::corpus::{load_examples, CorpusError};
use byseer_core::{Arch, Manifest, Model, Split, TrainConfig};

use super::{base_registry, emit, write_model};
use crate::error::CliError;
use crate::TrainArgs;

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let manifest = Manifest::load(&a.data.manifest)?;
    let root = a.data.root();
    let base = base_registry(a.registry.as_deref())?;
    let present = manifest.labels();
    if let Some(missing) = present.iter().find(|l| base.id_of(l).is_none()) {
        return Err(CorpusError::UnknownLabel(missing.clone()).into());
    }
    let labels: Vec<&str> = base
        .types()
        .iter()
        .map(|t| t.label.as_str())
        .filter(|l| present.contains(*l))
        .collect();
    let reg = base.subset(&labels)?;
    let train_set = load_examples(&root, &manifest, Split::Train, &reg)?;
    let val_set = load_examples(&root, &manifest, Split::Val, &reg)?;
    let cfg = TrainConfig {
        batch_size: a.batch_size,
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        epochs: a.epochs,
        cutmix_rate: a.cutmix_rate,
        seed: a.seed,
        dropout: a.dropout,
        spatial_dropout: a.spatial_dropout,
    };
    cfg.validate()?;
    eprintln!(
        "training {} types on {} samples ({} validation)",
        reg.len(),
        train_set.len(),
        val_set.len()
    );
    let model = Model::init(Arch::STANDARD, reg.labels(), a.seed)?;

    let ckpt_dir = a.checkpoint_dir.clone().unwrap_or_else(|| {
        a.out.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
    });
    let stem = a.out.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let every = a.checkpoint_every;
    let mut on_epoch = |s: &byseer_core::trainer::EpochStats, m: &Model<f32>| -> std::io::Result<()> {
        eprintln!(
            "epoch {:>3}  train_loss {:.5}  val_loss {:.5}  val_acc {:.4}",
            s.epoch, s.train_loss, s.val_loss, s.val_accuracy
        );
        if every > 0 && s.epoch.is_multiple_of(every) {
            std::fs::create_dir_all(&ckpt_dir)?;
            let path = ckpt_dir.join(format!("{stem}-epoch{:03}.bysr", s.epoch));
            write_model(m, &path).map_err(std::io::Error::other)?;
        }
        Ok(())
    };
    let (model, history) = byseer_core::train(model, &train_set, &val_set, &cfg, &mut on_epoch)?;
    write_model(&model, &a.out)?;
    if let Some(h) = &a.history {
        emit(Some(h), &history.to_csv())?;
    }
    Ok(())
}
