//! HTTP front of the annotation service. Schemas are described in
//! `docs/http-api.md`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::Args;
use scopelens::annotation::{
    AnnotationService, ImageSource, RecordStore, SemanticsDistribution, Submission, SubmitError, UnitResponse,
    DEFAULT_MIN_PRECISION,
};
use scopelens::net::ForwardOptions;
use scopelens::segmenter::segment;
use scopelens::{Image, Network, SemanticGroup, Tensor, Unit};
use serde::{Deserialize, Serialize};

use crate::commands::ThresholdArgs;
use crate::data::{load_images, load_network, parse_unit, preprocess_all, require_dataset, thresholds};
use crate::output::Output;
use crate::Global;

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Units to annotate, as LAYER:CHANNEL.
    #[arg(long, value_delimiter = ',', value_parser = parse_unit)]
    pub units: Vec<Unit>,
    /// Annotate every channel of this layer.
    #[arg(long)]
    pub layer: Option<String>,
    /// Annotation store; defaults to `annotations.ndjson` under --out.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Default precision cut for /stats.
    #[arg(long, default_value_t = DEFAULT_MIN_PRECISION)]
    pub min_precision: f64,
    #[command(flatten)]
    pub thr: ThresholdArgs,
}

fn plane(t: &Tensor, sample: usize, channel: usize) -> &[f32] {
    let s = t.shape();
    let len = s[2] * s[3];
    let start = (sample * s[1] + channel) * len;
    &t.data()[start..start + len]
}

/// Per unit and image: the maximum activation and, where the layer has a
/// rectifier, the most negative pre-activation.
pub fn unit_responses(
    net: &Network,
    dataset: &[(usize, Tensor)],
    units: &[Unit],
) -> anyhow::Result<HashMap<Unit, Vec<UnitResponse>>> {
    let spec = net.spec();
    let mut deepest = 0;
    for u in units {
        spec.check_unit(u)?;
        deepest = deepest.max(spec.layer_index(&u.layer)?);
    }
    let opts = ForwardOptions {
        keep_pre_activations: true,
        stop_after: Some(spec.layers()[deepest].name.clone()),
    };
    let mut out: HashMap<Unit, Vec<UnitResponse>> = units.iter().map(|u| (u.clone(), Vec::new())).collect();
    for chunk in dataset.chunks(16) {
        let tensors: Vec<Tensor> = chunk.iter().map(|(_, t)| t.clone()).collect();
        let trace = net.forward_with(&Tensor::stack(&tensors)?, &opts)?;
        for u in units {
            let post = trace.get(&u.layer).context("layer missing from trace")?;
            let pre = trace.pre_activation(&u.layer);
            let list = out.get_mut(u).unwrap();
            for (i, (id, _)) in chunk.iter().enumerate() {
                list.push(UnitResponse {
                    image_id: *id,
                    score: plane(post, i, u.channel).iter().cloned().fold(f32::NEG_INFINITY, f32::max),
                    negative_score: pre.map(|p| plane(p, i, u.channel).iter().cloned().fold(f32::INFINITY, f32::min)),
                });
            }
        }
    }
    Ok(out)
}

/// Shows where the unit fires: pixels outside its thresholded mask are dimmed.
pub struct SegmentedImages {
    net: Network,
    images: Vec<Image>,
    thresholds: HashMap<Unit, f32>,
}

impl SegmentedImages {
    pub fn new(net: Network, images: Vec<Image>, thresholds: HashMap<Unit, f32>) -> Self {
        Self {
            net,
            images,
            thresholds,
        }
    }
}

impl ImageSource for SegmentedImages {
    fn render(&self, unit: &Unit, image_id: usize) -> scopelens::Result<Image> {
        let img = self
            .images
            .get(image_id)
            .ok_or_else(|| scopelens::Error::InvalidArgument(format!("image {image_id}")))?;
        let thr = self
            .thresholds
            .get(unit)
            .copied()
            .ok_or_else(|| scopelens::Error::InvalidArgument(format!("unit {unit} has no threshold")))?;
        let seg = segment(&self.net, &self.net.preprocess(img), std::slice::from_ref(unit), &[thr])?;
        let mask = seg[0].mask.resized(img.width(), img.height());
        let mut out = img.clone();
        for (p, &inside) in out.pixels_mut().iter_mut().zip(mask.bits()) {
            if !inside {
                *p = p.map(|c| c / 4);
            }
        }
        Ok(out)
    }
}

#[derive(Clone)]
struct AppState {
    svc: Arc<AnnotationService>,
    min_precision: f64,
}

pub fn router(svc: Arc<AnnotationService>, min_precision: f64) -> Router {
    Router::new()
        .route("/units", get(units))
        .route("/task", get(task))
        .route("/img/{id}", get(image))
        .route("/submit", post(submit))
        .route("/stats/layer/{layer}", get(stats))
        .with_state(AppState { svc, min_precision })
}

fn error(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    let body = serde_json::json!({ "error": kind, "message": message.into() });
    (status, Json(body)).into_response()
}

#[derive(Serialize)]
struct UnitsBody {
    units: Vec<String>,
}

async fn units(State(s): State<AppState>) -> Json<UnitsBody> {
    Json(UnitsBody {
        units: s.svc.units().iter().map(Unit::to_string).collect(),
    })
}

#[derive(Deserialize)]
struct TaskQuery {
    unit: String,
    #[serde(default)]
    seed: u64,
}

async fn task(State(s): State<AppState>, Query(q): Query<TaskQuery>) -> Response {
    let unit: Unit = match q.unit.parse() {
        Ok(u) => u,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    if !s.svc.units().contains(&unit) {
        return error(StatusCode::NOT_FOUND, "unknown_unit", format!("unit {unit} is not served"));
    }
    match s.svc.task(&unit, q.seed) {
        Ok(payload) => Json(payload).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "task", e.to_string()),
    }
}

async fn image(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    let svc = s.svc.clone();
    match tokio::task::spawn_blocking(move || svc.image_png(&id)).await {
        Ok(Ok(png)) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        Ok(Err(e)) => error(StatusCode::NOT_FOUND, "unknown_image", e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "render", e.to_string()),
    }
}

async fn submit(State(s): State<AppState>, Json(sub): Json<Submission>) -> Response {
    let svc = s.svc.clone();
    let result = match tokio::task::spawn_blocking(move || svc.submit(&sub)).await {
        Ok(r) => r,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()),
    };
    match result {
        Ok(record) => Json(record).into_response(),
        Err(e @ SubmitError::UnknownTask(_)) => error(StatusCode::NOT_FOUND, "unknown_task", e.to_string()),
        // The count only: naming the missed tiles would reveal the planted negatives.
        Err(SubmitError::QualityControl { missing }) => error(
            StatusCode::UNPROCESSABLE_ENTITY,
            "quality_control",
            format!(
                "{} of the images that do not belong were left unmarked; review the grid and resubmit",
                missing.len()
            ),
        ),
        Err(e @ SubmitError::Validation(_)) => error(StatusCode::BAD_REQUEST, "validation", e.to_string()),
        Err(e @ SubmitError::Conflict(_)) => error(StatusCode::CONFLICT, "conflict", e.to_string()),
        Err(e @ SubmitError::Storage(_)) => error(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()),
    }
}

#[derive(Deserialize)]
struct StatsQuery {
    min_precision: Option<f64>,
}

#[derive(Serialize)]
struct StatsBody {
    groups: Vec<&'static str>,
    #[serde(flatten)]
    distribution: SemanticsDistribution,
}

async fn stats(State(s): State<AppState>, Path(layer): Path<String>, Query(q): Query<StatsQuery>) -> Response {
    let min = q.min_precision.unwrap_or(s.min_precision);
    if !(0.0..=1.0).contains(&min) {
        return error(StatusCode::BAD_REQUEST, "bad_request", "min_precision must be in [0, 1]");
    }
    Json(StatsBody {
        groups: SemanticGroup::ALL.iter().map(|g| g.as_str()).collect(),
        distribution: s.svc.layer_stats(&layer, min),
    })
    .into_response()
}

pub fn run(g: &Global, a: &ServeArgs) -> anyhow::Result<()> {
    let net = load_network(g)?;
    let mut units = a.units.clone();
    if let Some(layer) = &a.layer {
        let shape = net.spec().output_shape(layer)?;
        units.extend((0..shape.channels).map(|c| Unit::new(layer.clone(), c)));
    }
    if units.is_empty() {
        bail!("give --units or --layer");
    }
    let images = load_images(require_dataset(g)?)?;
    let dataset = preprocess_all(&net, &images);
    let responses = unit_responses(&net, &dataset, &units)?;
    let thr = thresholds(&net, &units, a.thr.thresholds.as_deref(), g, a.thr.quantile)?;
    let store_path = a.store.clone().unwrap_or_else(|| g.out.join("annotations.ndjson"));
    let mut out = Output::create(&g.out)?;
    let store = RecordStore::open(&store_path)?;
    println!(
        "{} units over {} images; {} records already in {}",
        units.len(),
        images.len(),
        store.records().len(),
        store_path.display()
    );
    out.json(
        "serve.json",
        &serde_json::json!({
            "addr": a.addr.to_string(),
            "store": store_path.display().to_string(),
            "units": units.iter().map(Unit::to_string).collect::<Vec<_>>(),
            "thresholds": units.iter().zip(&thr).map(|(u, t)| (u.to_string(), *t)).collect::<HashMap<_, _>>(),
        }),
    )?;
    out.finish();

    let source = SegmentedImages::new(
        net,
        images.into_iter().map(|(_, img)| img).collect(),
        units.iter().cloned().zip(thr).collect(),
    );
    let svc = Arc::new(AnnotationService::new(responses, Box::new(source), store));
    let app = router(svc, a.min_precision);
    tokio::runtime::Runtime::new()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
