#include "tokalign/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "tokalign/core.hpp"

namespace tokalign {

namespace {

constexpr std::uint32_t kHasGlobal = 1u << 0;
constexpr std::uint32_t kHasMask = 1u << 1;

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

struct Cursor {
    const unsigned char* p;
    std::size_t left;

    std::uint32_t u32() {
        if (left < 4) throw TruncatedPayload("ALNF: truncated while reading u32");
        const std::uint32_t v = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                                std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
        p += 4;
        left -= 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    unsigned char byte() {
        if (left < 1) throw TruncatedPayload("ALNF: truncated while reading byte");
        --left;
        return *p++;
    }
};

}  // namespace

void save_embeddings(const std::string& path, const std::vector<TokenSetd>& items,
                     bool with_globals) {
    std::string buf;
    buf += "ALNF";
    put_u32(buf, kAlnfVersion);
    put_u32(buf, std::uint32_t(items.size()));
    for (const TokenSetd& ts : items) {
        std::uint32_t flags = with_globals ? kHasGlobal : 0;
        if (!ts.mask.all()) flags |= kHasMask;
        put_u32(buf, std::uint32_t(ts.capacity()));
        put_u32(buf, std::uint32_t(ts.dim()));
        put_u32(buf, flags);
    }
    for (const TokenSetd& ts : items) {
        for (Index i = 0; i < ts.capacity(); ++i)
            for (Index j = 0; j < ts.dim(); ++j) put_f32(buf, float(ts.tokens(i, j)));
        if (with_globals)
            for (Index j = 0; j < ts.global.size(); ++j) put_f32(buf, float(ts.global[j]));
        if (!ts.mask.all())
            for (Index i = 0; i < ts.capacity(); ++i) buf.push_back(ts.mask[i] ? 1 : 0);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot open for writing: " + path);
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw FileError("write failed: " + path);
}

LoadedEmbeddings load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Cursor cur{reinterpret_cast<const unsigned char*>(buf.data()), buf.size()};
    if (cur.left < 4) throw TruncatedPayload("ALNF: file shorter than magic");
    if (std::memcmp(cur.p, "ALNF", 4) != 0) throw BadMagic("ALNF: magic mismatch");
    cur.p += 4;
    cur.left -= 4;
    const std::uint32_t version = cur.u32();
    if (version != kAlnfVersion)
        throw VersionUnsupported("ALNF: version " + std::to_string(version));
    const std::uint32_t count = cur.u32();

    struct ItemHeader {
        std::uint32_t l, d, flags;
    };
    std::vector<ItemHeader> headers(count);
    for (auto& h : headers) {
        h.l = cur.u32();
        h.d = cur.u32();
        h.flags = cur.u32();
        if (h.l == 0 || h.d == 0) throw FileError("ALNF: item with zero tokens or dim");
        if (h.flags & ~(kHasGlobal | kHasMask))
            throw FileError("ALNF: unknown flag bits set");
    }

    LoadedEmbeddings out;
    out.items.reserve(count);
    out.global_synthesized.reserve(count);
    for (const auto& h : headers) {
        TokenSetd ts;
        ts.tokens.resize(Index(h.l), Index(h.d));
        for (std::uint32_t i = 0; i < h.l; ++i)
            for (std::uint32_t j = 0; j < h.d; ++j)
                ts.tokens(Index(i), Index(j)) = double(cur.f32());
        if (h.flags & kHasGlobal) {
            ts.global.resize(Index(h.d));
            for (std::uint32_t j = 0; j < h.d; ++j) ts.global[Index(j)] = double(cur.f32());
        }
        ts.mask = MaskVec::Constant(Index(h.l), true);
        if (h.flags & kHasMask) {
            for (std::uint32_t i = 0; i < h.l; ++i) {
                const unsigned char b = cur.byte();
                if (b > 1) throw InvalidMask("ALNF: mask byte not 0/1");
                ts.mask[Index(i)] = b == 1;
            }
            if (!ts.mask.any()) throw InvalidMask("ALNF: item with no unmasked token");
        }
        if (!ts.tokens.allFinite()) throw FileError("ALNF: non-finite token payload");
        const bool synthesized = !(h.flags & kHasGlobal);
        if (synthesized) {
            Vec<double> mean = Vec<double>::Zero(Index(h.d));
            Index n = 0;
            for (Index i = 0; i < ts.capacity(); ++i)
                if (ts.mask[i]) {
                    mean += ts.tokens.row(i).transpose();
                    ++n;
                }
            mean /= double(n);
            const double norm = mean.norm();
            if (norm <= kZeroNormEps)
                throw FileError("ALNF: cannot synthesize global from zero-mean tokens");
            ts.global = mean / norm;
        } else if (!ts.global.allFinite()) {
            throw FileError("ALNF: non-finite global payload");
        }
        out.items.push_back(std::move(ts));
        out.global_synthesized.push_back(synthesized);
    }
    if (cur.left != 0) throw TrailingBytes("ALNF: " + std::to_string(cur.left) +
                                           " bytes past the declared payload");
    return out;
}

namespace {

nlohmann::json matrix_json(const Mat<double>& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::json vector_json(const Vec<double>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

std::vector<AlignmentDump::Contribution> top_contributions(const Mat<double>& contrib,
                                                           int top_k) {
    std::vector<AlignmentDump::Contribution> all;
    all.reserve(std::size_t(contrib.size()));
    for (Index s = 0; s < contrib.rows(); ++s)
        for (Index t = 0; t < contrib.cols(); ++t) all.push_back({s, t, contrib(s, t)});
    std::stable_sort(all.begin(), all.end(),
                     [](const auto& a, const auto& b) { return a.value > b.value; });
    if (int(all.size()) > top_k) all.resize(std::size_t(top_k));
    return all;
}

}  // namespace

AlignmentDump dump_alignment(const TokenSetd& mu, const TokenSetd& omega,
                             const StrategyConfig& cfg, std::ostream& sink, int top_k) {
    if (top_k < 1) throw InvalidParameter("dump_alignment: top_k must be >= 1");
    AlignmentDump dump;
    const TokenWeightsd w = token_weights(mu, omega);
    dump.d = w.d;
    dump.e = w.e;
    const SimilarityMatrixd c = token_similarity_matrix(mu, omega);
    dump.c = c.c;
    const auto [fv, ft] = detail::strategy_flows(mu, omega, c, cfg);
    dump.t_hat_v = 100.0 * fv.t;
    dump.t_hat_t = 100.0 * ft.t;
    dump.contrib_v = dump.t_hat_v.cwiseProduct(dump.c);
    dump.contrib_t = dump.t_hat_t.cwiseProduct(dump.c);
    dump.top_v = top_contributions(dump.contrib_v, top_k);
    dump.top_t = top_contributions(dump.contrib_t, top_k);
    dump.score = pair_similarity(mu, omega, cfg);

    nlohmann::json j;
    j["strategy"] = to_string(cfg.kind);
    j["lambda"] = cfg.lambda;
    j["global_blend_w"] = cfg.global_blend_w;
    j["l1"] = dump.c.rows();
    j["l2"] = dump.c.cols();
    j["d"] = vector_json(dump.d);
    j["e"] = vector_json(dump.e);
    j["c"] = matrix_json(dump.c);
    j["t_hat_v2t"] = matrix_json(dump.t_hat_v);
    j["t_hat_t2v"] = matrix_json(dump.t_hat_t);
    j["contrib_v2t"] = matrix_json(dump.contrib_v);
    j["contrib_t2v"] = matrix_json(dump.contrib_t);
    auto tops_json = [](const std::vector<AlignmentDump::Contribution>& tops) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& c : tops)
            arr.push_back({{"s", c.s}, {"t", c.t}, {"value", c.value}});
        return arr;
    };
    j["top_v2t"] = tops_json(dump.top_v);
    j["top_t2v"] = tops_json(dump.top_t);
    j["scores"] = {{"s_v", dump.score.s_v},
                   {"s_t", dump.score.s_t},
                   {"s_global", *dump.score.s_global},
                   {"s_fine_v", *dump.score.s_fine_v},
                   {"s_fine_t", *dump.score.s_fine_t}};
    sink << j.dump(2) << "\n";
    return dump;
}

}  // namespace tokalign
