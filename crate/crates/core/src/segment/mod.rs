//! Segmentation of long recordings into noise, music and speech.

mod metrics;
mod predict;
mod timeline;

pub use metrics::{score, score_labels, Score};
pub use predict::{
    centred_window, median_filter, sliding_predict, window_frames, SegmentPrediction, DEFAULT_EVAL_STRIDE,
    DEFAULT_MEDIAN_LEN,
};
pub use timeline::{
    synth_timeline, Segment, SegmentPools, Timeline, TimelineOptions, TruncatedExp, MAX_SEGMENT_FACTOR,
    MEAN_SEGMENT_S, MIN_SEGMENT_S,
};
