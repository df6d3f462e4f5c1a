// Binary embedding ingestion (ALNF files) and alignment dumps.
//
// ALNF layout, all integers little-endian u32:
//   magic "ALNF" | version=1 | item count
//   per item: token count L | dim d | flags (bit0 has_global, bit1 has_mask)
//   payload, concatenated per item in header order:
//     L*d float32 row-major tokens, then d float32 global if has_global,
//     then L mask bytes (0/1) if has_mask.
// The byte length must match the header-derived length exactly.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tokalign/strategies.hpp"
#include "tokalign/types.hpp"

namespace tokalign {

inline constexpr std::uint32_t kAlnfVersion = 1;

struct LoadedEmbeddings {
    std::vector<TokenSetd> items;
    // Parallel to items: true where the file had no global vector and the
    // loader synthesized one as l2_normalize(mean of unmasked tokens).
    std::vector<bool> global_synthesized;
};

LoadedEmbeddings load_embeddings(const std::string& path);

// Writes tokens (and globals) narrowed to float32. A mask block is emitted
// only for items with at least one masked row; `with_globals` false drops
// the global vectors so the loader's synthesis path can be exercised.
void save_embeddings(const std::string& path, const std::vector<TokenSetd>& items,
                     bool with_globals = true);

struct AlignmentDump {
    Vec<double> d, e;          // token weights of the pair
    Mat<double> c;             // token-pair similarities
    Mat<double> t_hat_v;       // 100 * T, visual-to-text
    Mat<double> t_hat_t;       // 100 * T, text-to-visual
    Mat<double> contrib_v;     // t_hat_v .* c
    Mat<double> contrib_t;     // t_hat_t .* c
    struct Contribution {
        Index s = 0, t = 0;
        double value = 0;
    };
    std::vector<Contribution> top_v, top_t;  // sorted by value, descending
    PairScored score;
};

// Computes the dump for one pair and writes it to `sink` as JSON.
AlignmentDump dump_alignment(const TokenSetd& mu, const TokenSetd& omega,
                             const StrategyConfig& cfg, std::ostream& sink, int top_k = 10);

}  // namespace tokalign
