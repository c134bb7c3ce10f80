//! C ABI over the adscreen pipeline.
//!
//! Every fallible function returns an [`AdsStatus`]; on failure the message
//! is available from [`ads_last_error_message`] on the same thread until the
//! next failing call. Objects are opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Passing a handle to any
//! function after freeing it is undefined behaviour.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use adscreen::audio::{load_wav, logmel_spectrogram, partition_patches, resample, AudioClip, ANALYSIS_RATE, MEL_BANDS};
use adscreen::audio_model::{aggregate_audio, MVGGish};
use adscreen::eval::{compute_metrics, roc_auc};
use adscreen::fusion::late_fuse;
use adscreen::pipeline::{load_audio_model, load_text_model, RunConfig};
use adscreen::text::{Transcript, TranscriptSource};
use adscreen::text_model::{aggregate_text, TextModel, TextSample};
use adscreen::{Error, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    /// Malformed WAV, weight container, CSV or JSON.
    Format = 5,
    Config = 6,
    /// Input lacks what the computation needs (one class only, empty, non-finite).
    Data = 7,
    Utf8 = 8,
    Panic = 9,
}

/// Confusion counts and metrics at a threshold. Undefined ratios are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdsMetrics {
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub specificity: f64,
    pub sensitivity: f64,
    /// NaN when only one class is present.
    pub auc: f64,
}

/// `[frames, 64]` log-mel spectrogram.
pub struct AdsSpectrogram {
    inner: Tensor<f32>,
}

pub struct AdsAudioModel {
    inner: MVGGish<f32>,
}

pub struct AdsTextModel {
    inner: TextModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AdsStatus {
    match e {
        Error::InvalidArgument(_) => AdsStatus::InvalidArgument,
        Error::Shape { .. } => AdsStatus::Shape,
        Error::Io { .. } => AdsStatus::Io,
        Error::Wav(_) | Error::Container(_) | Error::StrictLoad(_) | Error::Csv(_) | Error::Json(_) | Error::Manifest(_) => {
            AdsStatus::Format
        }
        Error::Config(_) => AdsStatus::Config,
        Error::NonFinite(_)
        | Error::SingleClass(_)
        | Error::Empty(_)
        | Error::UndefinedMetric(_)
        | Error::MissingEmbedding(_) => AdsStatus::Data,
    }
}

enum Failure {
    Status(AdsStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(AdsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdsStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            AdsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(AdsStatus::Utf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    match (p.is_null(), n) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(what)),
        (false, _) => Ok(std::slice::from_raw_parts(p, n)),
    }
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ads_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ads_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `(p_a + w p_t) / (1 + w)`; `w` must be non-negative, infinity gives `p_t`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn ads_late_fuse(p_a: f64, p_t: f64, w: f64, out: *mut f64) -> AdsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = late_fuse(p_a, p_t, w)?;
        Ok(())
    })
}

/// Metrics of `n` scores against labels (non-zero = AD) at `threshold`.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements; `out` to one
/// writable `AdsMetrics`.
#[no_mangle]
pub unsafe extern "C" fn ads_metrics(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    threshold: f64,
    out: *mut AdsMetrics,
) -> AdsStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        let labels = slice_arg(labels, n, "labels")?;
        let out = out_arg(out, "out")?;
        let scored: Vec<(f64, bool)> = scores.iter().zip(labels).map(|(&s, &l)| (s, l != 0)).collect();
        let m = compute_metrics(&scored, threshold)?;
        *out = AdsMetrics {
            n: m.n,
            tp: m.confusion.tp,
            fp: m.confusion.fp,
            tn: m.confusion.tn,
            fn_: m.confusion.fn_,
            accuracy: m.accuracy,
            f1: m.f1.unwrap_or(f64::NAN),
            specificity: m.specificity.unwrap_or(f64::NAN),
            sensitivity: m.sensitivity.unwrap_or(f64::NAN),
            auc: roc_auc(&scored).map_or(f64::NAN, |r| r.auc),
        };
        Ok(())
    })
}

/// Log-mel spectrogram of mono samples; other rates are resampled to 16 kHz.
///
/// # Safety
/// `samples` must point to `n` readable floats; `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn ads_spectrogram_from_samples(
    samples: *const f32,
    n: usize,
    sample_rate: u32,
    out: *mut *mut AdsSpectrogram,
) -> AdsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let clip = AudioClip::new(slice_arg(samples, n, "samples")?.to_vec(), sample_rate)?;
        *out = Box::into_raw(Box::new(spectrogram(clip)?));
        Ok(())
    })
}

/// Log-mel spectrogram of a PCM WAV file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn ads_spectrogram_from_wav(path: *const c_char, out: *mut *mut AdsSpectrogram) -> AdsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let clip = load_wav(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(spectrogram(clip)?));
        Ok(())
    })
}

fn spectrogram(mut clip: AudioClip) -> Result<AdsSpectrogram, Failure> {
    if clip.sample_rate != ANALYSIS_RATE {
        clip = resample(&clip, ANALYSIS_RATE)?;
    }
    Ok(AdsSpectrogram {
        inner: logmel_spectrogram(&clip)?,
    })
}

/// Number of frames (rows); 0 for NULL.
///
/// # Safety
/// `spec` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ads_spectrogram_frames(spec: *const AdsSpectrogram) -> usize {
    spec.as_ref().map_or(0, |s| s.inner.shape()[0])
}

/// Mel bands per frame (always 64).
#[no_mangle]
pub extern "C" fn ads_spectrogram_bands() -> usize {
    MEL_BANDS
}

/// Row-major `frames * 64` values owned by the handle; NULL for NULL.
///
/// # Safety
/// `spec` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ads_spectrogram_data(spec: *const AdsSpectrogram) -> *const f32 {
    spec.as_ref().map_or(ptr::null(), |s| s.inner.data().as_ptr())
}

/// # Safety
/// `spec` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ads_spectrogram_free(spec: *mut AdsSpectrogram) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Loads `audio.weights` and `audio.json` from a model directory.
///
/// # Safety
/// `model_dir` must be a NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn ads_audio_model_load(model_dir: *const c_char, out: *mut *mut AdsAudioModel) -> AdsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let (inner, _) = load_audio_model(&PathBuf::from(str_arg(model_dir, "model_dir")?))?;
        *out = Box::into_raw(Box::new(AdsAudioModel { inner }));
        Ok(())
    })
}

/// Subject-level `p_a`: mean patch probability over the non-overlapping
/// `patch_frames`-frame patches of `spec` (96 short, 496 long).
///
/// # Safety
/// `model` and `spec` must be live handles; `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn ads_audio_model_predict(
    model: *const AdsAudioModel,
    spec: *const AdsSpectrogram,
    patch_frames: usize,
    out: *mut f64,
) -> AdsStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let spec = ref_arg(spec, "spec")?;
        let out = out_arg(out, "out")?;
        let patches = partition_patches(&spec.inner, patch_frames, "ffi")?;
        if patches.is_empty() {
            return Err(Failure::Lib(Error::Empty("spectrogram shorter than one patch")));
        }
        let refs: Vec<_> = patches.iter().collect();
        *out = aggregate_audio(&model.inner.predict_patches(&refs)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ads_audio_model_free(model: *mut AdsAudioModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads the text model saved under `model_dir/text`. Models trained with
/// precomputed embeddings need `embeddings_path`; pass NULL otherwise.
///
/// # Safety
/// String arguments must be NULL (where allowed) or NUL-terminated; `out` a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn ads_text_model_load(
    model_dir: *const c_char,
    embeddings_path: *const c_char,
    out: *mut *mut AdsTextModel,
) -> AdsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let dir = PathBuf::from(str_arg(model_dir, "model_dir")?);
        let mut cfg = RunConfig::default();
        if !embeddings_path.is_null() {
            cfg.set("embeddings", str_arg(embeddings_path, "embeddings_path")?)?;
        }
        let (inner, _) = load_text_model(&dir, &cfg)?;
        *out = Box::into_raw(Box::new(AdsTextModel { inner }));
        Ok(())
    })
}

/// Subject-level `p_t` of a raw transcript: mean segment probability.
///
/// # Safety
/// `model` must be a live handle, `transcript` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ads_text_model_predict(
    model: *const AdsTextModel,
    transcript: *const c_char,
    out: *mut f64,
) -> AdsStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let text = str_arg(transcript, "transcript")?;
        let out = out_arg(out, "out")?;
        let t = Transcript::new("ffi", TranscriptSource::Manual, text);
        if t.tokens.is_empty() {
            return Err(Failure::Lib(Error::Empty("transcript has no tokens")));
        }
        let samples = TextSample::from_transcript("ffi", t.tokens, false)?;
        let pred = model.inner.predict_transcript(&samples)?;
        *out = aggregate_text(&pred.segment_probs)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ads_text_model_free(model: *mut AdsTextModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
