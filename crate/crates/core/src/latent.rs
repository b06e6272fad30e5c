//! Core latent-space types: frames, chunks, prompts, and scene scripts.
//!
//! A *frame* is a dense latent vector, a *chunk* is the fixed-length run of
//! frames produced by one generation step, and a *scene script* describes the
//! target content of a run: contiguous segments of chunks, each with a
//! unit-norm attractor (the point the synthetic rewards measure against) and
//! a prompt embedding (the conditioning the generator sees).

use ndarray::{Array1, Array2};
use thiserror::Error;

/// Errors from scene-script parsing and validation.
#[derive(Debug, Error)]
pub enum SceneScriptError {
    #[error("scene script line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("scene script: {0}")]
    Invalid(String),
    #[error("failed to read scene script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One latent frame: a dense vector of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrame {
    pub values: Array1<f64>,
}

impl LatentFrame {
    pub fn new(values: Array1<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Euclidean distance to another point in latent space.
    pub fn distance_to(&self, other: &Array1<f64>) -> f64 {
        debug_assert_eq!(self.values.len(), other.len());
        self.values
            .iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// One generated chunk: an ordered run of frames plus its position in the
/// stream. All frames share the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentChunk {
    frames: Vec<LatentFrame>,
    chunk_index: usize,
}

impl LatentChunk {
    /// Builds a chunk from an ordered list of frames.
    ///
    /// Panics if `frames` is empty or the frame dimensions disagree; chunks
    /// are only ever assembled internally from shape-checked matrices.
    pub fn new(frames: Vec<LatentFrame>, chunk_index: usize) -> Self {
        assert!(!frames.is_empty(), "a chunk must contain at least one frame");
        let dim = frames[0].dim();
        assert!(
            frames.iter().all(|f| f.dim() == dim),
            "all frames in a chunk must share one dimension"
        );
        Self { frames, chunk_index }
    }

    /// Builds a chunk from a `(frames, dim)` matrix, one frame per row.
    pub fn from_matrix(values: &Array2<f64>, chunk_index: usize) -> Self {
        let frames = values
            .rows()
            .into_iter()
            .map(|row| LatentFrame::new(row.to_owned()))
            .collect();
        Self::new(frames, chunk_index)
    }

    /// The chunk as a `(frames, dim)` matrix, one frame per row.
    pub fn to_matrix(&self) -> Array2<f64> {
        let dim = self.dim();
        let mut out = Array2::zeros((self.frames.len(), dim));
        for (i, frame) in self.frames.iter().enumerate() {
            out.row_mut(i).assign(&frame.values);
        }
        out
    }

    pub fn frames(&self) -> &[LatentFrame] {
        &self.frames
    }

    pub fn chunk_index(&self) -> usize {
        self.chunk_index
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }

    pub fn is_finite(&self) -> bool {
        self.frames
            .iter()
            .all(|f| f.values.iter().all(|v| v.is_finite()))
    }
}

/// Conditioning vector handed to the generator; constant within a scene
/// segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    pub values: Array1<f64>,
}

impl PromptEmbedding {
    pub fn new(values: Array1<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// One contiguous run of chunks targeting a single attractor.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSegment {
    /// First chunk index of the segment.
    pub start_chunk: usize,
    /// Unit-norm point the synthetic short reward measures proximity to.
    pub attractor: Array1<f64>,
    /// Conditioning the generator receives for chunks in this segment.
    pub prompt: PromptEmbedding,
}

/// The full plan for a run: how many chunks to generate and which segment
/// each chunk belongs to. Segment starts are strictly increasing and the
/// first segment starts at chunk 0, so the lookup is total on
/// `0..total_chunks`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneScript {
    total_chunks: usize,
    segments: Vec<SceneSegment>,
}

/// The scene script shipped with the engine, also available at
/// `data/default_scene.scene` for external tooling: 40 chunks over three
/// segments with scene switches at chunks 13 and 27, distinct unit-norm
/// attractors, and prompts equal to the attractors.
const DEFAULT_SCENE_TEXT: &str = include_str!("../../../data/default_scene.scene");

impl SceneScript {
    /// Validates and builds a script.
    pub fn new(
        total_chunks: usize,
        segments: Vec<SceneSegment>,
    ) -> Result<Self, SceneScriptError> {
        if total_chunks == 0 {
            return Err(SceneScriptError::Invalid(
                "total_chunks must be at least 1".into(),
            ));
        }
        if segments.is_empty() {
            return Err(SceneScriptError::Invalid(
                "a scene script needs at least one segment".into(),
            ));
        }
        if segments[0].start_chunk != 0 {
            return Err(SceneScriptError::Invalid(format!(
                "the first segment must start at chunk 0, found {}",
                segments[0].start_chunk
            )));
        }
        for pair in segments.windows(2) {
            if pair[1].start_chunk <= pair[0].start_chunk {
                return Err(SceneScriptError::Invalid(format!(
                    "segment starts must be strictly increasing ({} then {})",
                    pair[0].start_chunk, pair[1].start_chunk
                )));
            }
        }
        if let Some(last) = segments.last() {
            if last.start_chunk >= total_chunks {
                return Err(SceneScriptError::Invalid(format!(
                    "segment start {} is outside the {} planned chunks",
                    last.start_chunk, total_chunks
                )));
            }
        }
        let dim = segments[0].attractor.len();
        for (i, seg) in segments.iter().enumerate() {
            if seg.attractor.len() != dim || seg.prompt.dim() != dim {
                return Err(SceneScriptError::Invalid(format!(
                    "segment {i} mixes dimensions (expected {dim})"
                )));
            }
            if seg
                .attractor
                .iter()
                .chain(seg.prompt.values.iter())
                .any(|v| !v.is_finite())
            {
                return Err(SceneScriptError::Invalid(format!(
                    "segment {i} contains non-finite values"
                )));
            }
        }
        Ok(Self {
            total_chunks,
            segments,
        })
    }

    /// The script shipped with the engine (see [`DEFAULT_SCENE_TEXT`]).
    pub fn default_script() -> Self {
        Self::parse(DEFAULT_SCENE_TEXT)
            .expect("the bundled default scene script must parse")
    }

    /// Parses the line-oriented scene format:
    ///
    /// ```text
    /// # comment
    /// total_chunks = 40
    /// segment = <start_chunk> | <attractor csv> | <prompt csv>
    /// ```
    pub fn parse(text: &str) -> Result<Self, SceneScriptError> {
        let mut total_chunks: Option<usize> = None;
        let mut segments = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SceneScriptError::Parse {
                line: line_no,
                message: "expected `key = value`".into(),
            })?;
            match key.trim() {
                "total_chunks" => {
                    let n = value.trim().parse::<usize>().map_err(|e| {
                        SceneScriptError::Parse {
                            line: line_no,
                            message: format!("bad total_chunks: {e}"),
                        }
                    })?;
                    total_chunks = Some(n);
                }
                "segment" => {
                    let parts: Vec<&str> = value.split('|').collect();
                    if parts.len() != 3 {
                        return Err(SceneScriptError::Parse {
                            line: line_no,
                            message: "segment needs `start | attractor | prompt`".into(),
                        });
                    }
                    let start_chunk =
                        parts[0].trim().parse::<usize>().map_err(|e| {
                            SceneScriptError::Parse {
                                line: line_no,
                                message: format!("bad segment start: {e}"),
                            }
                        })?;
                    let attractor = parse_vector(parts[1], line_no)?;
                    let prompt = parse_vector(parts[2], line_no)?;
                    segments.push(SceneSegment {
                        start_chunk,
                        attractor: Array1::from(attractor),
                        prompt: PromptEmbedding::new(Array1::from(prompt)),
                    });
                }
                other => {
                    return Err(SceneScriptError::Parse {
                        line: line_no,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        let total_chunks = total_chunks.ok_or_else(|| {
            SceneScriptError::Invalid("missing total_chunks".into())
        })?;
        Self::new(total_chunks, segments)
    }

    /// Loads and parses a script file.
    pub fn load(path: &std::path::Path) -> Result<Self, SceneScriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn total_chunks(&self) -> usize {
        self.total_chunks
    }

    pub fn segments(&self) -> &[SceneSegment] {
        &self.segments
    }

    pub fn dim(&self) -> usize {
        self.segments[0].attractor.len()
    }

    /// The segment a chunk belongs to. Total on `0..total_chunks`; panics on
    /// out-of-range indices, which run setup rules out up front.
    pub fn segment_for(&self, chunk_index: usize) -> &SceneSegment {
        assert!(
            chunk_index < self.total_chunks,
            "chunk index {chunk_index} outside the scripted {} chunks",
            self.total_chunks
        );
        let pos = self
            .segments
            .partition_point(|seg| seg.start_chunk <= chunk_index);
        &self.segments[pos - 1]
    }

    /// The segment whose prompt is closest (in Euclidean distance) to the
    /// given embedding. The synthetic rewards use this to recover which
    /// segment a frame was generated for, since prompts are constant and
    /// distinct per segment.
    pub fn segment_by_prompt(&self, prompt: &PromptEmbedding) -> &SceneSegment {
        let mut best = &self.segments[0];
        let mut best_d2 = f64::INFINITY;
        for seg in &self.segments {
            let d2: f64 = seg
                .prompt
                .values
                .iter()
                .zip(prompt.values.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < best_d2 {
                best_d2 = d2;
                best = seg;
            }
        }
        best
    }
}

fn parse_vector(text: &str, line_no: usize) -> Result<Vec<f64>, SceneScriptError> {
    let values: Result<Vec<f64>, _> = text
        .split(',')
        .map(|tok| tok.trim().parse::<f64>())
        .collect();
    let values = values.map_err(|e| SceneScriptError::Parse {
        line: line_no,
        message: format!("bad vector component: {e}"),
    })?;
    if values.is_empty() {
        return Err(SceneScriptError::Parse {
            line: line_no,
            message: "empty vector".into(),
        });
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_segment_script() -> SceneScript {
        SceneScript::new(
            10,
            vec![
                SceneSegment {
                    start_chunk: 0,
                    attractor: array![1.0, 0.0],
                    prompt: PromptEmbedding::new(array![1.0, 0.0]),
                },
                SceneSegment {
                    start_chunk: 6,
                    attractor: array![0.0, 1.0],
                    prompt: PromptEmbedding::new(array![0.0, 1.0]),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn chunk_round_trips_through_matrix() {
        let m = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let chunk = LatentChunk::from_matrix(&m, 7);
        assert_eq!(chunk.chunk_index(), 7);
        assert_eq!(chunk.frames().len(), 3);
        assert_eq!(chunk.dim(), 2);
        assert_eq!(chunk.to_matrix(), m);
    }

    #[test]
    fn frame_distance_matches_hand_computation() {
        let f = LatentFrame::new(array![3.0, 4.0]);
        assert_eq!(f.distance_to(&array![0.0, 0.0]), 5.0);
        assert_eq!(f.distance_to(&array![3.0, 4.0]), 0.0);
    }

    #[test]
    fn segment_lookup_is_total_over_all_chunks() {
        let script = two_segment_script();
        for chunk in 0..script.total_chunks() {
            let seg = script.segment_for(chunk);
            if chunk < 6 {
                assert_eq!(seg.start_chunk, 0, "chunk {chunk}");
            } else {
                assert_eq!(seg.start_chunk, 6, "chunk {chunk}");
            }
        }
    }

    #[test]
    #[should_panic(expected = "outside the scripted")]
    fn segment_lookup_rejects_out_of_range() {
        two_segment_script().segment_for(10);
    }

    #[test]
    fn segment_by_prompt_recovers_the_segment() {
        let script = two_segment_script();
        for seg in script.segments() {
            let found = script.segment_by_prompt(&seg.prompt);
            assert_eq!(found.start_chunk, seg.start_chunk);
        }
    }

    #[test]
    fn script_rejects_bad_segment_orders() {
        let seg = |start| SceneSegment {
            start_chunk: start,
            attractor: array![1.0],
            prompt: PromptEmbedding::new(array![1.0]),
        };
        assert!(SceneScript::new(10, vec![]).is_err());
        assert!(SceneScript::new(10, vec![seg(1)]).is_err());
        assert!(SceneScript::new(10, vec![seg(0), seg(0)]).is_err());
        assert!(SceneScript::new(10, vec![seg(0), seg(12)]).is_err());
        assert!(SceneScript::new(0, vec![seg(0)]).is_err());
    }

    #[test]
    fn default_script_has_switches_at_13_and_27() {
        let script = SceneScript::default_script();
        assert_eq!(script.total_chunks(), 40);
        let starts: Vec<usize> = script.segments().iter().map(|s| s.start_chunk).collect();
        assert_eq!(starts, vec![0, 13, 27]);
        assert_eq!(script.dim(), 8);
        for seg in script.segments() {
            let norm: f64 = seg.attractor.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12, "attractors are unit norm");
            assert_eq!(seg.prompt.values, seg.attractor);
        }
        // Attractors are pairwise distinct.
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert_ne!(
                    script.segments()[i].attractor,
                    script.segments()[j].attractor
                );
            }
        }
        // Consecutive attractors carry a 0.8 component of their predecessor
        // (gradual scene drift); segments two apart overlap only 0.64.
        let at = |i: usize| &script.segments()[i].attractor;
        assert!((at(0).dot(at(1)) - 0.8).abs() < 1e-12);
        assert!((at(1).dot(at(2)) - 0.8).abs() < 1e-12);
        assert!((at(0).dot(at(2)) - 0.64).abs() < 1e-12);
    }

    #[test]
    fn parser_reports_line_numbers() {
        let err = SceneScript::parse("total_chunks = 4\nsegment = oops").unwrap_err();
        match err {
            SceneScriptError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
