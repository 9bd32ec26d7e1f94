//! Read-only HTTP service over a loaded checkpoint and dataset.
//!
//! All bodies are JSON; images travel as base64-encoded PNG. The model and
//! dataset are immutable after startup, so handlers share them through an
//! `Arc` and identical requests give identical responses.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use ncam_core::dna::Mutation;
use ncam_core::genelab::{self, SpliceRecipe};
use ncam_core::image_io::tensor_to_png;
use ncam_core::{Dataset, DnaEncoding, EncodingMode, ForwardOptions, Ncam, NcamError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Frame interval used when a request does not name one.
pub const DEFAULT_FRAMES_EVERY: usize = 4;

#[derive(Clone)]
pub struct AppState {
    pub model: Arc<Ncam>,
    pub data: Arc<Dataset>,
}

impl AppState {
    pub fn new(model: Ncam, data: Dataset) -> Self {
        Self {
            model: Arc::new(model),
            data: Arc::new(data),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/images", get(images))
        .route("/encode", post(encode))
        .route("/grow", post(grow))
        .route("/mean", post(mean))
        .route("/splice", post(splice))
        .route("/mutate", post(mutate))
        .with_state(state)
}

/// Error response: status plus `{"error": message}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl From<NcamError> for ApiError {
    fn from(e: NcamError) -> Self {
        let status = match e {
            NcamError::UnknownId(_) => StatusCode::NOT_FOUND,
            NcamError::Config(_)
            | NcamError::Precondition(_)
            | NcamError::Malformed { .. }
            | NcamError::Autodiff(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Parses a JSON body; the error names the offending field.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            ApiError::bad_request(format!("invalid request body: {inner}"))
        } else {
            ApiError::bad_request(format!("invalid request body: field `{path}`: {inner}"))
        }
    })
}

/// Runs model work off the async executor.
async fn compute<T, F>(state: AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Ncam, &Dataset) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state.model, &state.data))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: format!("worker failed: {e}"),
        })?
        .map(Json)
}

fn png_b64<'a>(frames: impl IntoIterator<Item = &'a ncam_core::Tensor<f32>>) -> Result<Vec<String>, ApiError> {
    frames
        .into_iter()
        .map(|f| Ok(BASE64.encode(tensor_to_png(f)?)))
        .collect()
}

fn frames_every(requested: Option<usize>) -> Result<usize, ApiError> {
    match requested.unwrap_or(DEFAULT_FRAMES_EVERY) {
        0 => Err(ApiError::bad_request("frames_every must be positive")),
        k => Ok(k),
    }
}

fn grow_options(every: usize, seed: u64) -> ForwardOptions {
    ForwardOptions {
        nca_seed: seed,
        frames_every: Some(every),
        ..ForwardOptions::default()
    }
}

/// Accepts a bare letter string or the full export (header line + letters).
pub fn parse_dna(text: &str) -> Result<DnaEncoding, ApiError> {
    let text = text.trim();
    let parsed = if text.contains('\n') || text.starts_with("NCAM") {
        DnaEncoding::parse_export(text)
    } else {
        DnaEncoding::from_letters(text)
    };
    parsed.map_err(|e| ApiError::bad_request(format!("field `dna`: {e}")))
}

fn require_dna_model(model: &Ncam) -> Result<(), ApiError> {
    if model.config.mode == EncodingMode::Dna {
        Ok(())
    } else {
        Err(ApiError::bad_request("the loaded model has no DNA codec"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: usize,
    pub label: Option<u8>,
    pub thumbnail: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImagesResponse {
    pub dataset: String,
    pub mode: EncodingMode,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub images: Vec<ImageEntry>,
}

async fn images(State(state): State<AppState>) -> ApiResult<ImagesResponse> {
    compute(state, |model, data| {
        let images = data
            .items
            .iter()
            .map(|it| {
                Ok(ImageEntry {
                    id: it.id,
                    label: it.label,
                    thumbnail: BASE64.encode(tensor_to_png(&it.image)?),
                })
            })
            .collect::<Result<Vec<_>, ApiError>>()?;
        Ok(ImagesResponse {
            dataset: data.name.clone(),
            mode: model.config.mode,
            dim: model.config.dim(),
            height: data.height,
            width: data.width,
            images,
        })
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeRequest {
    pub image_id: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub image_id: usize,
    /// Continuous encoding (length D).
    pub encoding: Vec<f32>,
    /// One-hot letters (DNA models only).
    pub dna: Option<String>,
    /// Mean over letter rows of the largest category probability.
    pub mean_max_prob: Option<f64>,
    /// Mean over letter rows of the category entropy, in bits.
    pub mean_entropy_bits: Option<f64>,
}

async fn encode(State(state): State<AppState>, body: Bytes) -> ApiResult<EncodeResponse> {
    let req: EncodeRequest = parse_body(&body)?;
    compute(state, move |model, data| {
        let image = &data.get(req.image_id)?.image;
        let encoding = model.encode_image(image)?.data().to_vec();
        let (dna, mean_max_prob, mean_entropy_bits) = if model.config.mode == EncodingMode::Dna {
            let soft = model.dna_of_image(image)?;
            let rows = soft.rows() as f64;
            let (mut max_sum, mut ent_sum) = (0.0, 0.0);
            for r in 0..soft.rows() {
                let row = soft.row(r);
                max_sum += row.iter().copied().fold(0.0f32, f32::max) as f64;
                ent_sum -= row
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| p as f64 * (p as f64).log2())
                    .sum::<f64>();
            }
            (Some(soft.to_letters()), Some(max_sum / rows), Some(ent_sum / rows))
        } else {
            (None, None, None)
        };
        Ok(EncodeResponse {
            image_id: req.image_id,
            encoding,
            dna,
            mean_max_prob,
            mean_entropy_bits,
        })
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowRequest {
    pub dna: Option<String>,
    pub image_id: Option<usize>,
    pub frames_every: Option<usize>,
    /// Seed of the stochastic update masks.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FramesResponse {
    /// Letters of the grown code (DNA models).
    pub dna: Option<String>,
    pub frames: Vec<String>,
}

async fn grow(State(state): State<AppState>, body: Bytes) -> ApiResult<FramesResponse> {
    let req: GrowRequest = parse_body(&body)?;
    let every = frames_every(req.frames_every)?;
    compute(state, move |model, data| {
        let opts = grow_options(every, req.seed);
        match (&req.dna, req.image_id) {
            (Some(text), None) => {
                require_dna_model(model)?;
                let dna = parse_dna(text)?;
                let (_, frames) = model.grow_from_dna(&dna, &opts)?;
                Ok(FramesResponse {
                    dna: Some(dna.to_letters()),
                    frames: png_b64(&frames)?,
                })
            }
            (None, Some(id)) => {
                let image = &data.get(id)?.image;
                let (_, frames) = model.reconstruct_image(image, &opts)?;
                let dna = match model.config.mode {
                    EncodingMode::Dna => Some(model.dna_of_image(image)?.to_letters()),
                    EncodingMode::Continuous => None,
                };
                Ok(FramesResponse {
                    dna,
                    frames: png_b64(&frames)?,
                })
            }
            _ => Err(ApiError::bad_request("exactly one of `dna` and `image_id` must be given")),
        }
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanRequest {
    pub source_ids: Vec<usize>,
    pub tau: f64,
    pub frames_every: Option<usize>,
    #[serde(default)]
    pub soft: bool,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeanResponse {
    /// Letters of the mean; `N` marks rows below the threshold.
    pub dna: String,
    pub asserted: usize,
    pub rows: usize,
    pub frames: Vec<String>,
}

async fn mean(State(state): State<AppState>, body: Bytes) -> ApiResult<MeanResponse> {
    let req: MeanRequest = parse_body(&body)?;
    let every = frames_every(req.frames_every)?;
    compute(state, move |model, data| {
        require_dna_model(model)?;
        for &id in &req.source_ids {
            data.get(id)?;
        }
        let mean = genelab::mean_of_ids(model, data, &req.source_ids, req.tau, req.soft)?;
        let (_, frames) = model.grow_from_dna(&mean.dna, &grow_options(every, req.seed))?;
        Ok(MeanResponse {
            dna: mean.dna.to_letters(),
            asserted: mean.asserted,
            rows: mean.dna.rows(),
            frames: png_b64(&frames)?,
        })
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpliceRequest {
    pub source_ids: Vec<usize>,
    pub tau: f64,
    pub target_id: usize,
    pub frames_every: Option<usize>,
    #[serde(default)]
    pub soft: bool,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpliceResponse {
    pub dna: String,
    pub target_dna: String,
    pub asserted: usize,
    pub frames: Vec<String>,
}

async fn splice(State(state): State<AppState>, body: Bytes) -> ApiResult<SpliceResponse> {
    let req: SpliceRequest = parse_body(&body)?;
    let every = frames_every(req.frames_every)?;
    compute(state, move |model, data| {
        require_dna_model(model)?;
        let recipe = SpliceRecipe {
            source_ids: req.source_ids,
            tau: req.tau,
            target_id: req.target_id,
            soft: req.soft,
        };
        let target = genelab::discrete_dna(model, data, recipe.target_id)?;
        let out = genelab::run_recipe(model, data, &recipe, &grow_options(every, req.seed))?;
        Ok(SpliceResponse {
            dna: out.spliced.to_letters(),
            target_dna: target.to_letters(),
            asserted: out.mean.asserted,
            frames: png_b64(&out.frames)?,
        })
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutateRequest {
    pub dna: String,
    pub rate: f64,
    pub seed: u64,
    pub frames_every: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MutateResponse {
    pub dna: String,
    /// Number of rows given a fresh random letter.
    pub replaced: usize,
    pub frames: Vec<String>,
}

async fn mutate(State(state): State<AppState>, body: Bytes) -> ApiResult<MutateResponse> {
    let req: MutateRequest = parse_body(&body)?;
    let every = frames_every(req.frames_every)?;
    compute(state, move |model, _| {
        require_dna_model(model)?;
        let dna = parse_dna(&req.dna)?;
        let mutation = Mutation::from_seed(req.seed, dna.rows(), req.rate)?;
        let mutated = mutation.apply(&dna)?;
        let (_, frames) = model.grow_from_dna(&mutated, &grow_options(every, req.seed))?;
        Ok(MutateResponse {
            dna: mutated.to_letters(),
            replaced: mutation.replaced.len(),
            frames: png_b64(&frames)?,
        })
    })
    .await
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
