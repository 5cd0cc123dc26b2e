use std::path::Path;
use std::process::Command;

use choreo_cli::config::PipelineConfig;

fn choreo(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_choreo"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap();
    let text = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    (out.status.code().unwrap_or(-1), text)
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let (code, text) = choreo(dir, args);
    assert_eq!(code, 0, "{args:?}: {text}");
    text
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let p = ["--profile", "smoke"];
    let with = |extra: &[&'static str]| -> Vec<&'static str> { [&p[..], extra].concat() };

    // Stage order is enforced before anything is trained.
    let (code, text) = choreo(d, &with(&["train-gpt"]));
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("train-vqvae"), "{text}");

    ok(d, &with(&["gen-synth"]));
    assert!(d.join("corpus/manifest.json").is_file());
    ok(d, &with(&["train-vqvae"]));
    let (code, text) = choreo(d, &with(&["finetune-ac"]));
    assert_eq!(code, 2, "{text}");
    ok(d, &with(&["train-gpt"]));
    ok(d, &with(&["finetune-ac"]));
    for f in ["vqvae_upper.ckpt", "vqvae_lower.ckpt", "gpt.ckpt", "actor_critic.ckpt", "vqvae_upper_loss.csv", "vqvae_lower_loss.csv", "gpt_loss.csv", "reward_curve.csv"] {
        assert!(d.join("checkpoints").join(f).is_file(), "{f}");
    }
    let curve = std::fs::read_to_string(d.join("checkpoints/reward_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3, "{curve}");

    std::fs::create_dir(d.join("gen")).unwrap();
    ok(d, &with(&["generate", "--music", "corpus/seq0000.mfeat", "--length", "12", "--out", "gen/a.motn"]));
    ok(d, &with(&["generate", "--music", "corpus/seq0001.mfeat", "--length", "12", "--out", "gen/b.motn", "--start-upper", "1", "--start-lower", "2"]));
    assert!(d.join("gen/a.codes.json").is_file() && d.join("gen/a.beats.json").is_file());
    let (code, text) = choreo(d, &with(&["generate", "--music", "corpus/seq0000.mfeat", "--length", "99", "--out", "gen/c.motn"]));
    assert_eq!(code, 3, "{text}");

    let report = ok(d, &with(&["evaluate", "--generated", "gen", "--reference", "corpus", "--out", "eval"]));
    assert!(report.contains("BAS"), "{report}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(json["n_generated"], 2);
    assert_eq!(json["n_reference"], 4);
    assert_eq!(std::fs::read_to_string(d.join("eval/report.csv")).unwrap().lines().count(), 3);

    ok(d, &with(&["inspect-codebook", "--checkpoint", "checkpoints/vqvae_upper.ckpt", "--out", "codes"]));
    assert!(d.join("codes/code_0007.motn").is_file());
    assert_eq!(std::fs::read_to_string(d.join("codes/codebook.csv")).unwrap().lines().count(), 9);

    ok(d, &with(&["export-anim", "gen/a.motn", "a.csv"]));
    ok(d, &with(&["import-anim", "a.csv", "a2.motn"]));
    assert_eq!(std::fs::read(d.join("gen/a.motn")).unwrap(), std::fs::read(d.join("a2.motn")).unwrap());
    ok(d, &with(&["export-anim", "gen/a.motn", "a.json"]));
    ok(d, &with(&["import-anim", "a.json", "a3.motn"]));
    assert_eq!(std::fs::read(d.join("gen/a.motn")).unwrap(), std::fs::read(d.join("a3.motn")).unwrap());
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["--profile", "smoke", "gen-synth"]);
    ok(d, &["--profile", "smoke", "train-vqvae", "--checkpoints", "full"]);
    ok(d, &["--profile", "smoke", "train-vqvae", "--checkpoints", "split", "--steps", "17"]);
    ok(d, &["--profile", "smoke", "train-vqvae", "--checkpoints", "split", "--resume"]);
    for f in ["vqvae_upper.ckpt", "vqvae_lower.ckpt", "vqvae_upper_loss.csv", "vqvae_lower_loss.csv"] {
        assert_eq!(std::fs::read(d.join("full").join(f)).unwrap(), std::fs::read(d.join("split").join(f)).unwrap(), "{f}");
    }
    ok(d, &["--profile", "smoke", "train-gpt", "--checkpoints", "full"]);
    for f in ["vqvae_upper.ckpt", "vqvae_lower.ckpt"] {
        std::fs::copy(d.join("full").join(f), d.join("split").join(f)).unwrap();
    }
    ok(d, &["--profile", "smoke", "train-gpt", "--checkpoints", "split", "--steps", "7"]);
    ok(d, &["--profile", "smoke", "train-gpt", "--checkpoints", "split", "--resume"]);
    for f in ["gpt.ckpt", "gpt_loss.csv"] {
        assert_eq!(std::fs::read(d.join("full").join(f)).unwrap(), std::fs::read(d.join("split").join(f)).unwrap(), "{f}");
    }
    ok(d, &["--profile", "smoke", "finetune-ac", "--checkpoints", "full"]);
    ok(d, &["--profile", "smoke", "finetune-ac", "--checkpoints", "split", "--steps", "1"]);
    ok(d, &["--profile", "smoke", "finetune-ac", "--checkpoints", "split", "--resume"]);
    for f in ["actor_critic.ckpt", "reward_curve.csv"] {
        assert_eq!(std::fs::read(d.join("full").join(f)).unwrap(), std::fs::read(d.join("split").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut cfg = PipelineConfig::smoke();
    cfg.gpt.codebook_size = 9;
    std::fs::write(d.join("bad.toml"), cfg.to_toml()).unwrap();
    let (code, text) = choreo(d, &["--config", "bad.toml", "gen-synth"]);
    assert_eq!(code, 2, "{text}");
    std::fs::write(d.join("good.toml"), PipelineConfig::smoke().to_toml()).unwrap();
    ok(d, &["--config", "good.toml", "gen-synth", "--out", "c"]);
    let (code, text) = choreo(d, &["--config", "good.toml", "export-anim", "c/seq0000.motn", "x.bin"]);
    assert_eq!(code, 2, "{text}");
    let (code, text) = choreo(d, &["--config", "good.toml", "inspect-codebook", "--checkpoint", "missing.ckpt", "--out", "o"]);
    assert_eq!(code, 3, "{text}");
}
