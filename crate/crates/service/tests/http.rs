use axum::Router;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine;
use base64::engine::general_purpose::STANDARD;
use candle_core::Device;
use http_body_util::BodyExt;
use maskcycle_core::mask_gen::{decode_png, encode_png, sample_centered_square};
use maskcycle_core::optim::AdamConfig;
use maskcycle_core::{Checkpoint, Image, Mask, MaskScheme, NetConfig, RngState};
use maskcycle_service::{AppState, MAX_BODY_BYTES, checkpoint_id, cors_layer, router};
use serde_json::{Value, json};
use tower::ServiceExt;

const RES: usize = 32;

fn tiny_ckpt() -> Checkpoint {
    let net = NetConfig {
        resolution: RES,
        gen_filters: 4,
        encoder_filters: 4,
        res_blocks: 1,
        disc_filters: 4,
    };
    Checkpoint::init(
        net,
        MaskScheme::multi_rectangles(),
        AdamConfig::default(),
        &mut RngState::new(9),
        &Device::Cpu,
    )
    .unwrap()
}

fn ready_app() -> Router {
    let ckpt = tiny_ckpt();
    let id = checkpoint_id(&ckpt.to_bytes().unwrap());
    router(AppState::ready(ckpt, id), cors_layer(&[]).unwrap())
}

fn loading_app() -> Router {
    router(AppState::loading(), cors_layer(&[]).unwrap())
}

fn test_image(size: usize) -> Image {
    let mut img = Image::filled(3, size, size, 0.0);
    for i in 0..size {
        for j in 0..size {
            img.set(0, i, j, (i as f32 / size as f32) * 2.0 - 1.0);
            img.set(1, i, j, (j as f32 / size as f32) * 2.0 - 1.0);
        }
    }
    img
}

fn png_b64(img: &Image) -> String {
    STANDARD.encode(img.encode_png().unwrap())
}

fn mask_b64(m: &Mask) -> String {
    STANDARD.encode(encode_png(m).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(serde_json::to_vec(&body).unwrap())).await
}

fn decoded_image(v: &Value) -> Image {
    let bytes = STANDARD.decode(v["image"].as_str().unwrap()).unwrap();
    Image::decode(&bytes).unwrap()
}

#[tokio::test]
async fn health_and_info_after_load() {
    let app = ready_app();
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok"}));

    let (status, info) = call(&app, "GET", "/info", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(info["resolution"], RES);
    assert_eq!(info["domains"], json!(["A", "B"]));
    assert_eq!(info["scheme"]["variant"], "multi-rectangles");
    assert_eq!(info["iteration"], 0);
    assert_eq!(info["checkpointId"].as_str().unwrap().len(), 16);
}

#[tokio::test]
async fn everything_model_backed_is_503_before_load() {
    let app = loading_app();
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["status"], "loading");
    assert_eq!(call(&app, "GET", "/info", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    let (status, body) = post(&app, "/translate", json!({"direction": "a2b", "image": png_b64(&test_image(RES))})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn failed_load_is_reported() {
    let state = AppState::loading();
    state.fail("no such file".into());
    let app = router(state, cors_layer(&[]).unwrap());
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["status"], "failed");
}

#[tokio::test]
async fn load_installs_checkpoint_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    tiny_ckpt().save(&path).unwrap();
    let state = AppState::loading();
    maskcycle_service::spawn_load(state.clone(), path).await.unwrap();
    assert!(state.is_ready());
}

#[tokio::test]
async fn translate_full_mask_returns_model_resolution_png() {
    let app = ready_app();
    let (status, body) = post(&app, "/translate", json!({"direction": "a2b", "image": png_b64(&test_image(RES))})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let out = decoded_image(&body);
    assert_eq!((out.channels(), out.height(), out.width()), (3, RES, RES));
    assert!(body["latencyMs"].as_f64().unwrap() >= 0.0);
}

#[tokio::test]
async fn translate_resizes_inputs_to_model_resolution() {
    let app = ready_app();
    let mask = sample_centered_square(48, 0.5).unwrap();
    let (status, body) = post(
        &app,
        "/translate",
        json!({"direction": "b2a", "image": png_b64(&test_image(48)), "mask": mask_b64(&mask)}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(decoded_image(&body).height(), RES);
}

#[tokio::test]
async fn repeated_requests_are_byte_identical() {
    let app = ready_app();
    let mask = sample_centered_square(RES, 0.8).unwrap();
    let req = json!({"direction": "a2b", "image": png_b64(&test_image(RES)), "mask": mask_b64(&mask)});
    let (_, first) = post(&app, "/translate", req.clone()).await;
    let (_, second) = post(&app, "/translate", req).await;
    assert_eq!(first["image"], second["image"]);
}

#[tokio::test]
async fn concurrent_requests_match_sequential_results() {
    let app = ready_app();
    let reqs: Vec<Value> = [0.5, 0.8, 1.0]
        .iter()
        .map(|&s| {
            let m = sample_centered_square(RES, s).unwrap();
            json!({"direction": "a2b", "image": png_b64(&test_image(RES)), "mask": mask_b64(&m)})
        })
        .collect();
    let mut sequential = Vec::new();
    for r in &reqs {
        sequential.push(post(&app, "/translate", r.clone()).await.1["image"].clone());
    }
    let handles: Vec<_> = reqs
        .iter()
        .rev()
        .map(|r| {
            let (app, r) = (app.clone(), r.clone());
            tokio::spawn(async move { post(&app, "/translate", r).await.1["image"].clone() })
        })
        .collect();
    let mut concurrent = Vec::new();
    for h in handles {
        concurrent.push(h.await.unwrap());
    }
    concurrent.reverse();
    assert_eq!(sequential, concurrent);
}

#[tokio::test]
async fn data_url_payloads_are_accepted() {
    let app = ready_app();
    let image = format!("data:image/png;base64,{}", png_b64(&test_image(RES)));
    let (status, _) = post(&app, "/translate", json!({"direction": "a2b", "image": image})).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn bad_payloads_are_400_with_error_body() {
    let app = ready_app();
    let img = png_b64(&test_image(RES));
    let cases = [
        json!({"direction": "a2b", "image": "not base64!!"}),
        json!({"direction": "a2b", "image": STANDARD.encode(b"not a png")}),
        json!({"direction": "sideways", "image": img}),
        json!({"image": img}),
        json!({"direction": "a2b", "image": img, "extra": 1}),
        json!({"direction": "a2b", "image": img, "mask": "%%%"}),
    ];
    for case in cases {
        let (status, body) = post(&app, "/translate", case.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{case}");
        assert!(body["error"].as_str().is_some_and(|e| !e.is_empty()), "{case}");
    }
    let (status, body) = call(&app, "POST", "/translate", Some(b"{not json".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn non_binary_mask_is_rejected() {
    let app = ready_app();
    let gray = Image::filled(3, RES, RES, 0.0);
    let (status, body) = post(
        &app,
        "/translate",
        json!({"direction": "a2b", "image": png_b64(&test_image(RES)), "mask": png_b64(&gray)}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("not binary"));
}

#[tokio::test]
async fn oversized_payload_is_413() {
    let app = ready_app();
    let body = vec![b' '; MAX_BODY_BYTES + 1];
    let (status, _) = call(&app, "POST", "/translate", Some(body)).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn sampled_masks_are_deterministic_and_decode_bit_exact() {
    let app = ready_app();
    let req = json!({"variant": "multi-rectangles", "seed": 7, "size": 64});
    let (status, first) = post(&app, "/masks/sample", req.clone()).await;
    assert_eq!(status, StatusCode::OK, "{first}");
    let (_, second) = post(&app, "/masks/sample", req).await;
    assert_eq!(first["mask"], second["mask"]);

    let bytes = STANDARD.decode(first["mask"].as_str().unwrap()).unwrap();
    let mask = decode_png(&bytes).unwrap();
    assert_eq!(mask.size(), 64);
    assert_eq!(first["fraction"].as_f64().unwrap(), mask.fraction());
    let sampler = maskcycle_core::MaskSampler::new(MaskScheme::multi_rectangles(), 64).unwrap();
    assert_eq!(mask, sampler.sample(&mut RngState::new(7)).unwrap());
}

#[tokio::test]
async fn centered_square_defaults_to_model_resolution() {
    let app = ready_app();
    let (status, body) = post(&app, "/masks/sample", json!({"variant": "centered-square", "scale": 0.8})).await;
    assert_eq!(status, StatusCode::OK);
    let mask = decode_png(&STANDARD.decode(body["mask"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(mask, sample_centered_square(RES, 0.8).unwrap());
}

#[tokio::test]
async fn sampling_works_before_load() {
    let app = loading_app();
    let (status, body) = post(&app, "/masks/sample", json!({"variant": "full"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["size"], maskcycle_service::DEFAULT_MASK_SIZE);
    assert_eq!(body["fraction"], 1.0);
}

#[tokio::test]
async fn invalid_schemes_are_400() {
    let app = ready_app();
    for case in [
        json!({"variant": "centered-square", "scale": 0}),
        json!({"variant": "round", "scale": 1.5}),
        json!({"variant": "multi-rectangles", "minSumRelArea": -0.1}),
        json!({"variant": "attention-binarize", "threshold": 0.5}),
        json!({"variant": "hexagons"}),
        json!({"variant": "full", "size": 0}),
    ] {
        let (status, body) = post(&app, "/masks/sample", case.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{case}");
        assert!(body["error"].is_string(), "{case}");
    }
}

#[tokio::test]
async fn studio_exported_mask_round_trips_through_translate() {
    // a mask fetched from /masks/sample is accepted by /translate unchanged
    let app = ready_app();
    let (_, sampled) = post(&app, "/masks/sample", json!({"variant": "round", "scale": 0.8})).await;
    let (status, body) = post(
        &app,
        "/translate",
        json!({"direction": "a2b", "image": png_b64(&test_image(RES)), "mask": sampled["mask"]}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let app = router(
        AppState::loading(),
        cors_layer(&["http://localhost:5173".to_string()]).unwrap(),
    );
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/translate")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        "http://localhost:5173"
    );
    assert!(cors_layer(&["bad\norigin".to_string()]).is_err());
}
