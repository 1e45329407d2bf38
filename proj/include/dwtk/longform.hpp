#pragma once

#include "dwtk/decode.hpp"

#include <vector>

namespace dwtk {

/// Overlapping windows over [0, total_frames). Chunk i spans
/// [offsets[i], min(offsets[i] + chunk_len, total_frames)).
struct ChunkPlan {
  int total_frames = 0;
  int chunk_len = 0;
  int overlap = 0;
  std::vector<int> offsets;

  int begin(std::size_t i) const { return offsets.at(i); }
  int end(std::size_t i) const { return std::min(offsets.at(i) + chunk_len, total_frames); }
  std::size_t size() const { return offsets.size(); }
};

/// Offsets 0, s, 2s, ... with s = chunk_len - overlap, continuing while a
/// chunk still holds a full overlap region. One chunk when
/// total_frames <= chunk_len.
ChunkPlan plan_chunks(int total_frames, int chunk_len, int overlap);

/// Chunk length in frames for a duration, rounded to the nearest frame.
int seconds_to_frames(double seconds, double frame_rate);

struct ChunkResult {
  std::size_t index = 0;
  TokenSequence tokens;  // </s> stripped
  bool ended = false;    // the decode emitted </s>
  int begin = 0;
  int end = 0;
};

/// Token counts of the overlap on each side.
struct MergeWindows {
  int left = 0;
  int right = 0;
};

/// Splices `right` onto `left` at the midpoint of the longest common
/// contiguous run between the tail window of `left` and the head window of
/// `right`. Ties go to the leftmost run in `left`, then in `right`. Without a
/// common token each side gives up half its window.
TokenSequence merge_pair(const TokenSequence& left, const TokenSequence& right, MergeWindows windows);

/// Expected overlap tokens for a chunk, from its own token rate.
int overlap_tokens(std::size_t chunk_tokens, int chunk_frames, int overlap_frames);

/// Decodes every chunk on up to `jobs` threads.
std::vector<ChunkResult> transcribe_chunks(const ChunkPlan& plan, const FeatureSequence& features,
                                           const Transcriber& transcriber, int jobs = 1,
                                           Token eos_token = kEosToken);

/// Left fold of merge_pair over chunk results in plan order. Ends with </s>
/// when the last chunk did.
TokenSequence merge_chunks(const ChunkPlan& plan, const std::vector<ChunkResult>& results,
                           Token eos_token = kEosToken);

TokenSequence transcribe_long(const Transcriber& transcriber, const FeatureSequence& features, int chunk_len,
                              int overlap, int jobs = 1, Token eos_token = kEosToken);
TokenSequence transcribe_long(const ModelParams& model, const FeatureSequence& features, int chunk_len, int overlap,
                              const DecodeConfig& config, int jobs = 1);

}  // namespace dwtk
