#include "dwtk/longform.hpp"

#include "dwtk/parallel.hpp"

#include <cmath>

namespace dwtk {

ChunkPlan plan_chunks(int total_frames, int chunk_len, int overlap) {
  if (total_frames < 1) throw ValidationError("no frames to chunk");
  if (overlap < 0 || chunk_len < 2 * overlap + 1) throw ValidationError("chunk length must exceed twice the overlap");
  ChunkPlan plan{total_frames, chunk_len, overlap, {0}};
  if (total_frames <= chunk_len) return plan;
  const int stride = chunk_len - overlap;
  for (int offset = stride; offset + overlap <= total_frames && offset < total_frames; offset += stride) {
    plan.offsets.push_back(offset);
  }
  return plan;
}

int seconds_to_frames(double seconds, double frame_rate) {
  if (!(seconds >= 0) || !(frame_rate > 0)) throw ValidationError("invalid duration");
  return static_cast<int>(std::lround(seconds * frame_rate));
}

TokenSequence merge_pair(const TokenSequence& left, const TokenSequence& right, MergeWindows windows) {
  const int nl = static_cast<int>(left.size());
  const int nr = static_cast<int>(right.size());
  const int wl = std::clamp(windows.left, 0, nl);
  const int wr = std::clamp(windows.right, 0, nr);
  const int l0 = nl - wl;

  // Longest common run ending at (i, j), scanned so the first maximum found
  // is the leftmost in `left`, then in `right`.
  int best = 0, best_ls = 0, best_rs = 0;
  std::vector<int> prev(static_cast<std::size_t>(wr) + 1, 0), cur(prev.size(), 0);
  for (int i = 0; i < wl; ++i) {
    for (int j = 0; j < wr; ++j) {
      cur[static_cast<std::size_t>(j) + 1] =
          left[static_cast<std::size_t>(l0 + i)] == right[static_cast<std::size_t>(j)] ? prev[static_cast<std::size_t>(j)] + 1 : 0;
    }
    std::swap(prev, cur);
    for (int j = 0; j < wr; ++j) {
      const int len = prev[static_cast<std::size_t>(j) + 1];
      if (len == 0) continue;
      const int ls = l0 + i - len + 1;
      const int rs = j - len + 1;
      if (len > best || (len == best && (ls < best_ls || (ls == best_ls && rs < best_rs)))) {
        best = len;
        best_ls = ls;
        best_rs = rs;
      }
    }
  }

  TokenSequence out;
  if (best == 0) {
    out.assign(left.begin(), left.begin() + (nl - wl / 2));
    out.insert(out.end(), right.begin() + wr / 2, right.end());
    return out;
  }
  const int mid = best / 2;
  out.assign(left.begin(), left.begin() + best_ls + mid);
  out.insert(out.end(), right.begin() + best_rs + mid, right.end());
  return out;
}

int overlap_tokens(std::size_t chunk_tokens, int chunk_frames, int overlap_frames) {
  if (chunk_frames <= 0) return 0;
  const double rate = static_cast<double>(chunk_tokens) / chunk_frames;
  return static_cast<int>(std::lround(rate * overlap_frames));
}

std::vector<ChunkResult> transcribe_chunks(const ChunkPlan& plan, const FeatureSequence& features,
                                           const Transcriber& transcriber, int jobs, Token eos_token) {
  if (plan.total_frames != features.length()) throw ValidationError("chunk plan does not match the input length");
  std::vector<ChunkResult> results(plan.size());
  parallel_for(plan.size(), jobs, [&](std::size_t i) {
    ChunkResult& r = results[i];
    r.index = i;
    r.begin = plan.begin(i);
    r.end = plan.end(i);
    FeatureSequence chunk{features.frames.middleRows(r.begin, r.end - r.begin), features.frame_rate};
    try {
      r.tokens = transcriber(chunk);
      const auto eos = std::find(r.tokens.begin(), r.tokens.end(), eos_token);
      r.ended = eos != r.tokens.end();
      r.tokens.erase(eos, r.tokens.end());
    } catch (const ValidationError& e) {
      throw ValidationError("chunk " + std::to_string(i) + ": " + e.what());
    } catch (const std::exception& e) {
      throw RuntimeError("chunk " + std::to_string(i) + ": " + e.what());
    }
  });
  return results;
}

TokenSequence merge_chunks(const ChunkPlan& plan, const std::vector<ChunkResult>& results, Token eos_token) {
  if (results.size() != plan.size()) throw ValidationError("one result per chunk is required");
  TokenSequence merged = results[0].tokens;
  for (std::size_t i = 1; i < results.size(); ++i) {
    const TokenSequence& left_chunk = results[i - 1].tokens;
    const TokenSequence& right = results[i].tokens;
    const int overlap = plan.end(i - 1) - plan.begin(i);
    const MergeWindows windows{
        overlap_tokens(left_chunk.size(), plan.end(i - 1) - plan.begin(i - 1), overlap),
        overlap_tokens(right.size(), plan.end(i) - plan.begin(i), overlap)};
    merged = merge_pair(merged, right, windows);
  }
  if (results.back().ended) merged.push_back(eos_token);
  return merged;
}

TokenSequence transcribe_long(const Transcriber& transcriber, const FeatureSequence& features, int chunk_len,
                              int overlap, int jobs, Token eos_token) {
  const ChunkPlan plan = plan_chunks(features.length(), chunk_len, overlap);
  if (plan.size() == 1) return transcriber(features);
  return merge_chunks(plan, transcribe_chunks(plan, features, transcriber, jobs, eos_token), eos_token);
}

TokenSequence transcribe_long(const ModelParams& model, const FeatureSequence& features, int chunk_len, int overlap,
                              const DecodeConfig& config, int jobs) {
  return transcribe_long(make_transcriber(model, nullptr, config), features, chunk_len, overlap, jobs, config.eos_token);
}

}  // namespace dwtk
