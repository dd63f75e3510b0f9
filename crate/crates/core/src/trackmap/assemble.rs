use super::{IdentifiedSegment, TrackMap};
use crate::error::{Error, Result};
use crate::geom::{LocalFrame, TrackElement};

/// Gaps shorter than this (meters) are closed without a transitional arc.
pub const GAP_THRESHOLD: f64 = 0.5;

/// Chains identified segments into a map, bridging every gap with a
/// transitional arc whose initial length is the gap chord.
///
/// The chain starts at the first segment's anchor. Later anchors only
/// determine gap lengths, so the result is the plain concatenation that
/// [`super::refine_map`] starts from.
pub fn assemble_map(segments: &[IdentifiedSegment], frame: &LocalFrame) -> Result<TrackMap> {
    let first = segments
        .first()
        .ok_or_else(|| Error::domain("no segments to assemble"))?;
    for (i, s) in segments.iter().enumerate() {
        s.validate()?;
        if i > 0 && s.start_time < segments[i - 1].end_time {
            return Err(Error::domain(format!(
                "segment {i} starts at {} before segment {} ends at {}",
                s.start_time,
                i - 1,
                segments[i - 1].end_time
            )));
        }
    }

    let mut elements = vec![first.element()];
    for pair in segments.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let prev_end = prev.element().pose_unchecked(&prev.anchor, prev.length);
        let chord = prev_end.distance_to(next.anchor.position());
        if chord >= GAP_THRESHOLD {
            elements.push(TrackElement::transitional_arc(chord, prev.curvature, next.curvature));
        }
        elements.push(next.element());
    }
    TrackMap::from_start_pose(frame, &first.anchor, elements)
}
