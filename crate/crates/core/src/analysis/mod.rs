//! Beat-level morphology summaries, class interpolation and figures.

mod beats;
mod interp;
mod peaks;
mod plot;

pub use beats::{beat_quantiles, quantile_sorted, segment_beats, BeatMatrix, QuantileBand, BEAT_AFTER, BEAT_BEFORE, BEAT_LEN};
pub use interp::{interpolate_conditions, InterpolationRequest, DEFAULT_ALPHAS};
pub use peaks::{detect_r_peaks, detection_envelope, REFRACTORY_S};
pub use plot::{emit_band_plot, emit_trace_plot, BandGrid};
