mod common;

use std::collections::BTreeMap;
use std::fs;

use codelens_core::{
    enumerate_gallery, ingest_embedding_file, load_manifest, save_manifest, write_embedding_file, BackgroundPolicy,
    CodeSpace, DistanceMetric, EmbeddingSet, SpaceTag,
};
use common::*;
use serde_json::Value;

#[test]
fn enumerate_writes_120_entries_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let args = ["gallery", "enumerate", "--shapes", "3", "--textures", "4", "--noise", "10", "--out", p(&out)];
    let run = codelens(&args);
    assert!(run.status.success(), "{}", stderr(&run));
    let first = fs::read(&out).unwrap();
    assert_eq!(load_manifest(&out).unwrap().len(), 120);
    assert!(codelens(&args).status.success());
    assert_eq!(fs::read(&out).unwrap(), first);
}

#[test]
fn enumerate_rejects_zero_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let run = codelens(&["gallery", "enumerate", "--shapes", "0", "--textures", "4", "--out", p(&out)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("n_shape"), "{}", stderr(&run));
    assert!(!out.exists());
}

#[test]
fn enumerate_with_policy_and_paths_then_lookup() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let run = codelens(&[
        "gallery", "enumerate", "--shapes", "2", "--textures", "2", "--noise", "2", "--backgrounds", "2",
        "--background-policy", "independent", "--path-template", "imgs/{id}.png", "--out", p(&out),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let json: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json["entries"].as_array().unwrap().len(), 16);
    assert_eq!(json["entries"][0]["id"], "g_b0_s0_t0_z0");
    assert_eq!(json["entries"][0]["path"], "imgs/g_b0_s0_t0_z0.png");
    assert_eq!(json["code_space"]["background_policy"], "independent");

    let run = codelens(&["--json", "gallery", "lookup", "--manifest", p(&out), "--id", "g_b1_s0_t1_z0"]);
    let entry: Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!((entry["background"].as_u64(), entry["texture"].as_u64()), (Some(1), Some(1)));
    let run = codelens(&["gallery", "lookup", "--manifest", p(&out), "--id", "nope"]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let run = codelens(&["synth", "--shapes", "3", "--textures", "4", "--dim", "8", "--seed", "3", "--out-dir", p(out)]);
        assert!(run.status.success(), "{}", stderr(&run));
    }
    for name in ["manifest.json", "shape.cfge", "texture.cfge"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    // 120 records of id_len(2) + 13-byte id + 8 floats
    let size = fs::metadata(a.join("shape.cfge")).unwrap().len();
    assert_eq!(size, 19 + 120 * (2 + 13 + 32));
}

#[test]
fn synth_rejects_bad_params() {
    let dir = tempfile::tempdir().unwrap();
    let run = codelens(&["synth", "--dim", "1", "--out-dir", p(dir.path())]);
    assert_eq!(run.status.code(), Some(2));
    let run = codelens(&["synth", "--biased-w-shape", "0", "--biased-w-texture", "0", "--out-dir", p(dir.path())]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn eval_on_opposite_pair_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let space = CodeSpace { n_background: 1, n_shape: 2, n_texture: 1, n_noise: 1, background_policy: BackgroundPolicy::Fixed(0) };
    let manifest = enumerate_gallery(space).unwrap();
    let m_path = dir.path().join("m.json");
    save_manifest(&manifest, &m_path).unwrap();
    let set = EmbeddingSet::from_records(
        SpaceTag::Shape,
        2,
        manifest.entries().iter().enumerate().map(|(i, e)| (e.image_id.clone(), vec![1.0, i as f32])),
    )
    .unwrap();
    let e_path = dir.path().join("s.cfge");
    write_embedding_file(&set, &e_path).unwrap();
    let report_path = dir.path().join("r.json");
    let run = codelens(&["--json", "eval", "accuracy", "--manifest", p(&m_path), "--embeddings", p(&e_path), "--metric", "squared_l2", "--out", p(&report_path)]);
    assert!(run.status.success(), "{}", stderr(&run));
    let report: Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!(report["accuracy"].as_f64(), Some(0.0));
    assert_eq!(report, serde_json::from_str::<Value>(&fs::read_to_string(&report_path).unwrap()).unwrap());
}

fn assert_report_schema(report: &Value) {
    let obj = report.as_object().unwrap();
    let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 7, "{keys:?}");
    assert!(["shape", "texture"].contains(&report["space"].as_str().unwrap()));
    assert!(["shape", "texture"].contains(&report["code_axis"].as_str().unwrap()));
    assert!(["cosine", "squared_l2"].contains(&report["metric"].as_str().unwrap()));
    let n = report["n_queries"].as_u64().unwrap();
    let c = report["n_correct"].as_u64().unwrap();
    assert!(c <= n);
    assert_eq!(report["accuracy"].as_f64().unwrap(), c as f64 / n as f64);
    let per_code = report["per_code"].as_object().unwrap();
    let mut total = 0;
    for (code, pair) in per_code {
        code.parse::<u32>().unwrap();
        let pair = pair.as_array().unwrap();
        assert_eq!(pair.len(), 2);
        assert!(pair[0].as_u64().unwrap() <= pair[1].as_u64().unwrap());
        total += pair[1].as_u64().unwrap();
    }
    assert_eq!(total, n);
}

#[test]
fn eval_compare_on_synth_files_has_positive_delta() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let run = codelens(&["synth", "--seed", "2", "--out-dir", p(out)]);
    assert!(run.status.success(), "{}", stderr(&run));
    let run = codelens(&[
        "--json", "eval", "accuracy", "--manifest", p(&out.join("manifest.json")),
        "--embeddings", p(&out.join("shape.cfge")), "--compare", p(&out.join("texture.cfge")),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let paired: Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert!(paired["delta"].as_f64().unwrap() > 0.0);
    assert_report_schema(&paired["primary"]);
    assert_report_schema(&paired["compare"]);
    assert_eq!(paired["primary"]["space"], "shape");
    assert_eq!(paired["compare"]["space"], "texture");
}

#[test]
fn eval_coverage_failure_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    codelens(&["synth", "--shapes", "2", "--textures", "2", "--noise", "2", "--dim", "4", "--out-dir", p(out)]);
    let other = out.join("bigger.json");
    codelens(&["gallery", "enumerate", "--shapes", "3", "--textures", "2", "--noise", "2", "--out", p(&other)]);
    let run = codelens(&["eval", "accuracy", "--manifest", p(&other), "--embeddings", p(&out.join("shape.cfge"))]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("missing"), "{}", stderr(&run));
    let run = codelens(&["embeddings", "check", "--manifest", p(&other), "--file", p(&out.join("shape.cfge"))]);
    assert_eq!(run.status.code(), Some(2));
    let run = codelens(&["embeddings", "check", "--manifest", p(&out.join("manifest.json")), "--file", p(&out.join("texture.cfge")), "--space", "texture"]);
    assert!(run.status.success());
}

#[test]
fn synth_experiment_report_mirrors_eval_format() {
    let dir = tempfile::tempdir().unwrap();
    let run = codelens(&["--json", "synth", "--experiment", "--out-dir", p(dir.path())]);
    assert!(run.status.success(), "{}", stderr(&run));
    let summary: Value = serde_json::from_str(&stdout(&run)).unwrap();
    let file: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("experiment.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], file);
    assert_report_schema(&file["biased"]);
    assert_report_schema(&file["unbiased"]);
    assert!(file["delta"].as_f64().unwrap() >= 0.20, "{}", file["delta"]);
}

/// Gallery with a texture-heavy texture space and a shape-heavy shape space.
fn clustered_gallery(dir: &std::path::Path) {
    let run = codelens(&[
        "synth", "--shapes", "4", "--textures", "8", "--noise", "3", "--dim", "24", "--seed", "17",
        "--biased-w-shape", "4", "--biased-w-texture", "1", "--unbiased-w-shape", "1", "--unbiased-w-texture", "4",
        "--w-noise", "0.3", "--sigma", "0.1", "--out-dir", p(dir),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
}

fn brute_force_nearest(set: &EmbeddingSet, query: &[f32], metric: DistanceMetric) -> String {
    let unit = |v: &[f32]| {
        let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        v.iter().map(|&x| x as f64 / n).collect::<Vec<f64>>()
    };
    let q = unit(query);
    let mut best: Option<(f64, String)> = None;
    for (id, v) in set.iter() {
        let d = match metric {
            DistanceMetric::SquaredL2 => v.iter().zip(query).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>(),
            DistanceMetric::Cosine => 1.0 - unit(v).iter().zip(&q).map(|(a, b)| a * b).sum::<f64>(),
        };
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, id.to_string()));
        }
    }
    best.unwrap().1
}

#[test]
fn pipeline_recovers_cluster_codes() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path();
    clustered_gallery(g);
    let i1 = g.join("i1.cfge");
    let i2 = g.join("i2.cfge");
    let q = |label: &str, space: &str, shape: &str, texture: &str, ws: &str, wt: &str, out: &std::path::Path| {
        let run = codelens(&[
            "synth-query", "--label", label, "--space", space, "--shape", shape, "--texture", texture, "--noise", "1",
            "--dim", "24", "--seed", "17", "--w-shape", ws, "--w-texture", wt, "--w-noise", "0.3", "--sigma", "0.1",
            "--out", p(out),
        ]);
        assert!(run.status.success(), "{}", stderr(&run));
    };
    // I1 looks like texture 7 (with shape 0), I2 like shape 2 (with texture 5)
    q("q_I1", "texture", "0", "7", "1", "4", &i1);
    q("q_I2", "shape", "2", "5", "4", "1", &i2);

    let out_dir = g.join("out");
    let run = codelens(&[
        "--json", "pipeline", "run", "--manifest", p(&g.join("manifest.json")),
        "--texture-embeddings", p(&g.join("texture.cfge")), "--shape-embeddings", p(&g.join("shape.cfge")),
        "--i1", p(&i1), "--i2", p(&i2), "--out-dir", p(&out_dir),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let result: Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!(result["texture_code"], 7);
    assert_eq!(result["shape_code"], 2);
    assert_eq!(result["composed"]["texture"], 7);
    assert_eq!(result["composed"]["shape"], 2);
    assert_eq!(result["composed"]["background"], 7);
    assert_eq!(result["i1"], "q_I1");

    // brute-force oracle over the same files
    let manifest = load_manifest(g.join("manifest.json")).unwrap();
    let texture = ingest_embedding_file(g.join("texture.cfge"), SpaceTag::Texture).unwrap();
    let shape = ingest_embedding_file(g.join("shape.cfge"), SpaceTag::Shape).unwrap();
    let q1 = ingest_embedding_file(&i1, SpaceTag::Texture).unwrap().into_single_query().unwrap();
    let q2 = ingest_embedding_file(&i2, SpaceTag::Shape).unwrap().into_single_query().unwrap();
    let t_id = brute_force_nearest(&texture, &q1.vector, DistanceMetric::Cosine);
    let s_id = brute_force_nearest(&shape, &q2.vector, DistanceMetric::Cosine);
    assert_eq!(result["texture_hit"]["image_id"], t_id.as_str());
    assert_eq!(result["shape_hit"]["image_id"], s_id.as_str());
    assert_eq!(manifest.lookup(&t_id).unwrap().codes.texture, 7);
    assert_eq!(manifest.lookup(&s_id).unwrap().codes.shape, 2);
    assert_eq!(result["composed"]["noise"], manifest.lookup(&s_id).unwrap().codes.noise);

    let written: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("result.json")).unwrap()).unwrap();
    assert_eq!(written, result);
}

/// Planted texture vector from one entry, planted shape vector from another.
fn planted_queries(g: &std::path::Path, texture_id: &str, shape_id: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let texture = ingest_embedding_file(g.join("texture.cfge"), SpaceTag::Texture).unwrap();
    let shape = ingest_embedding_file(g.join("shape.cfge"), SpaceTag::Shape).unwrap();
    let r1 = EmbeddingSet::from_records(SpaceTag::Texture, texture.dim(), [("q_I1", texture.get(texture_id).unwrap().to_vec())]).unwrap();
    let r2 = EmbeddingSet::from_records(SpaceTag::Shape, shape.dim(), [("q_I2", shape.get(shape_id).unwrap().to_vec())]).unwrap();
    let (p1, p2) = (g.join("planted_i1.cfge"), g.join("planted_i2.cfge"));
    write_embedding_file(&r1, &p1).unwrap();
    write_embedding_file(&r2, &p2).unwrap();
    (p1, p2)
}

#[test]
fn pipeline_with_image_inputs_uses_embedder_commands() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path();
    clustered_gallery(g);
    planted_queries(g, "g_b5_s1_t5_z2", "g_b0_s3_t0_z1");
    // stub embedders pick the planted file by image name
    let embedder = script(g, "embed.sh", &format!("cp \"{}/planted_$(basename \"$1\" .png).cfge\" \"$2\"", g.display()));
    fs::write(g.join("i1.png"), b"not really a png").unwrap();
    fs::write(g.join("i2.png"), b"not really a png").unwrap();
    let (generator, record) = recording_generator(g);

    let config = serde_json::json!({
        "manifest": "manifest.json",
        "texture_embeddings": "texture.cfge",
        "shape_embeddings": "shape.cfge",
        "metric": "cosine",
        "noise_source": "texture_hit",
        "embedder_command_texture": format!("{} {{input}} {{output}}", embedder.display()),
        "embedder_command_shape": format!("{} {{input}} {{output}}", embedder.display()),
        "generator_command": generator.display().to_string(),
        "output_dir": "run",
    });
    let cfg = g.join("pipeline.json");
    fs::write(&cfg, config.to_string()).unwrap();
    let run = codelens(&["--json", "pipeline", "run", "--config", p(&cfg), "--i1", p(&g.join("i1.png")), "--i2", p(&g.join("i2.png"))]);
    assert!(run.status.success(), "{}", stderr(&run));
    let result: Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!((result["texture_code"].as_u64(), result["shape_code"].as_u64()), (Some(5), Some(3)));
    assert_eq!(result["composed"], serde_json::json!({"background": 5, "shape": 3, "texture": 5, "noise": 2}));

    let args = fs::read_to_string(&record).unwrap();
    let image = result["generated_image"].as_str().unwrap();
    assert_eq!(args, format!("--background\n5\n--shape\n3\n--texture\n5\n--noise\n2\n--out\n{image}\n"));
    assert!(std::path::Path::new(image).exists());
    assert!(g.join("run/q_I1.cfge").exists());
}

#[test]
fn adapter_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path();
    clustered_gallery(g);
    let (p1, p2) = planted_queries(g, "g_b5_s1_t5_z2", "g_b0_s3_t0_z1");
    fs::write(g.join("i1.png"), b"x").unwrap();
    let (manifest, tex, shp, out, img) = (
        g.join("manifest.json"),
        g.join("texture.cfge"),
        g.join("shape.cfge"),
        g.join("out"),
        g.join("i1.png"),
    );
    let base = [
        "pipeline", "run", "--manifest", p(&manifest), "--texture-embeddings", p(&tex),
        "--shape-embeddings", p(&shp), "--out-dir", p(&out),
    ];

    let failing = script(g, "fail.sh", "echo 'weights not found' >&2; exit 1");
    let template = format!("{} {{input}} {{output}}", failing.display());
    let mut args = base.to_vec();
    args.extend(["--embedder-texture", &template, "--i1", p(&img), "--i2", p(&p2)]);
    let run = codelens(&args);
    assert_eq!(run.status.code(), Some(3));
    assert!(stderr(&run).contains("weights not found"), "{}", stderr(&run));

    // embedder succeeds but writes a shape-tagged file for the texture query
    let wrong = script(g, "wrong.sh", &format!("cp '{}' \"$2\"", p2.display()));
    let template = format!("{} {{input}} {{output}}", wrong.display());
    let mut args = base.to_vec();
    args.extend(["--embedder-texture", &template, "--i1", p(&img), "--i2", p(&p2)]);
    assert_eq!(codelens(&args).status.code(), Some(3));

    let broken_gen = script(g, "gen_fail.sh", "exit 9");
    let mut args = base.to_vec();
    args.extend(["--generator", p(&broken_gen), "--i1", p(&p1), "--i2", p(&p2)]);
    assert_eq!(codelens(&args).status.code(), Some(3));
}

#[test]
fn pipeline_validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path();
    clustered_gallery(g);
    let (p1, p2) = planted_queries(g, "g_b5_s1_t5_z2", "g_b0_s3_t0_z1");
    let manifest = p(&g.join("manifest.json")).to_string();
    let tex = p(&g.join("texture.cfge")).to_string();
    let shp = p(&g.join("shape.cfge")).to_string();
    let out = p(&g.join("out")).to_string();
    let run_with = |extra: &[&str]| {
        let mut args = vec!["pipeline", "run", "--out-dir", &out];
        args.extend_from_slice(extra);
        codelens(&args)
    };
    // missing embeddings file
    let missing = p(&g.join("nope.cfge")).to_string();
    let r = run_with(&["--manifest", &manifest, "--texture-embeddings", &missing, "--shape-embeddings", &shp, "--i1", p(&p1), "--i2", p(&p2)]);
    assert_eq!(r.status.code(), Some(2));
    // spaces swapped
    let r = run_with(&["--manifest", &manifest, "--texture-embeddings", &shp, "--shape-embeddings", &tex, "--i1", p(&p1), "--i2", p(&p2)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("mismatch"));
    // image input without an embedder
    let r = run_with(&["--manifest", &manifest, "--texture-embeddings", &tex, "--shape-embeddings", &shp, "--i1", "photo.jpg", "--i2", p(&p2)]);
    assert_eq!(r.status.code(), Some(2));
    // fixed noise out of range
    let r = run_with(&[
        "--manifest", &manifest, "--texture-embeddings", &tex, "--shape-embeddings", &shp, "--noise-source", "fixed",
        "--fixed-noise", "3", "--i1", p(&p1), "--i2", p(&p2),
    ]);
    assert_eq!(r.status.code(), Some(2));
    // missing manifest setting
    let r = run_with(&["--texture-embeddings", &tex, "--shape-embeddings", &shp, "--i1", p(&p1), "--i2", p(&p2)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn background_override_and_fixed_noise() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path();
    clustered_gallery(g);
    let (p1, p2) = planted_queries(g, "g_b5_s1_t5_z2", "g_b0_s3_t0_z1");
    let run = codelens(&[
        "--json", "pipeline", "run", "--manifest", p(&g.join("manifest.json")),
        "--texture-embeddings", p(&g.join("texture.cfge")), "--shape-embeddings", p(&g.join("shape.cfge")),
        "--metric", "squared_l2", "--background-policy", "fixed", "--fixed-background", "2",
        "--noise-source", "fixed", "--fixed-noise", "0", "--i1", p(&p1), "--i2", p(&p2), "--out-dir", p(&g.join("o")),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let result: Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!(result["composed"], serde_json::json!({"background": 2, "shape": 3, "texture": 5, "noise": 0}));
    assert_eq!(result["texture_hit"]["distance"].as_f64(), Some(0.0));
    assert!(result.get("generated_image").is_none());
}

#[test]
fn human_output_without_json_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let run = codelens(&["gallery", "enumerate", "--shapes", "1", "--textures", "1", "--noise", "1", "--out", p(&out)]);
    assert_eq!(stdout(&run).trim(), format!("wrote 1 entries to {}", out.display()));
    let run = codelens(&["--json", "gallery", "enumerate", "--shapes", "1", "--textures", "1", "--noise", "1", "--out", p(&out)]);
    let v: BTreeMap<String, Value> = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!(v["entries"], 1);
}
