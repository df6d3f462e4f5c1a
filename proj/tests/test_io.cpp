#include <doctest.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tokalign/core.hpp"
#include "tokalign/harness.hpp"
#include "tokalign/io.hpp"
#include "tokalign/strategies.hpp"

using namespace tokalign;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& tag) {
    return fs::temp_directory_path() / ("tokalign_io_" + tag + ".alnf");
}

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void write_bytes(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

// Minimal hand-rolled file: one item, 2 tokens of dim 2, global, no mask.
std::string small_valid_buffer() {
    std::string buf = "ALNF";
    put_u32(buf, 1);  // version
    put_u32(buf, 1);  // item count
    put_u32(buf, 2);  // L
    put_u32(buf, 2);  // d
    put_u32(buf, 1);  // flags: has_global
    for (float v : {1.0f, 0.0f, 0.0f, 1.0f}) put_f32(buf, v);
    put_f32(buf, 0.6f);
    put_f32(buf, 0.8f);
    return buf;
}

// Token sets whose entries already sit on float32 grid points, so the
// narrow-then-widen round trip must be bit exact.
TokenSetd float_exact_set(Rng& rng, Index l, Index d) {
    Mat<double> toks(l, d);
    for (Index i = 0; i < l; ++i)
        for (Index j = 0; j < d; ++j) toks(i, j) = double(float(rng.gaussian()));
    Vec<double> g(d);
    for (Index j = 0; j < d; ++j) g[j] = double(float(rng.gaussian()));
    return TokenSetd::dense(toks, g);
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("embeddings round-trip bit exactly through the float32 container") {
    Rng rng(101);
    std::vector<TokenSetd> items;
    items.push_back(float_exact_set(rng, 3, 5));
    items.push_back(float_exact_set(rng, 1, 5));
    TokenSetd padded = float_exact_set(rng, 4, 5);
    padded.mask[2] = false;
    items.push_back(padded);

    const fs::path path = temp_file("roundtrip");
    save_embeddings(path.string(), items);
    const LoadedEmbeddings back = load_embeddings(path.string());
    fs::remove(path);

    REQUIRE(back.items.size() == 3);
    for (std::size_t k = 0; k < items.size(); ++k) {
        const TokenSetd& a = items[k];
        const TokenSetd& b = back.items[k];
        REQUIRE(b.capacity() == a.capacity());
        REQUIRE(b.dim() == a.dim());
        CHECK((b.tokens - a.tokens).norm() == 0.0);
        CHECK((b.global - a.global).norm() == 0.0);
        CHECK((b.mask == a.mask).all());
        CHECK_FALSE(back.global_synthesized[k]);
    }
    CHECK(back.items[2].count() == 3);
}

TEST_CASE("loader synthesizes missing globals from the unmasked token mean") {
    Rng rng(202);
    std::vector<TokenSetd> items;
    items.push_back(float_exact_set(rng, 4, 6));
    TokenSetd padded = float_exact_set(rng, 3, 6);
    padded.mask[0] = false;
    items.push_back(padded);

    const fs::path path = temp_file("synth");
    save_embeddings(path.string(), items, /*with_globals=*/false);
    const LoadedEmbeddings back = load_embeddings(path.string());
    fs::remove(path);

    REQUIRE(back.items.size() == 2);
    for (std::size_t k = 0; k < back.items.size(); ++k) {
        CHECK(back.global_synthesized[k]);
        const TokenSetd& ts = back.items[k];
        Vec<double> mean = Vec<double>::Zero(ts.dim());
        Index n = 0;
        for (Index i = 0; i < ts.capacity(); ++i)
            if (ts.mask[i]) {
                mean += ts.tokens.row(i).transpose();
                ++n;
            }
        mean /= double(n);
        const Vec<double> want = mean / mean.norm();
        CHECK((ts.global - want).norm() < 1e-15);
        CHECK(ts.global.norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("malformed files are rejected with specific errors") {
    const fs::path path = temp_file("bad");

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_embeddings((path / "nope.alnf").string()), FileError);
    }
    SUBCASE("magic mismatch") {
        std::string buf = small_valid_buffer();
        buf[0] = 'B';
        write_bytes(path, buf);
        CHECK_THROWS_AS(load_embeddings(path.string()), BadMagic);
    }
    SUBCASE("file shorter than the magic") {
        write_bytes(path, "AL");
        CHECK_THROWS_AS(load_embeddings(path.string()), TruncatedPayload);
    }
    SUBCASE("unsupported version") {
        std::string buf = small_valid_buffer();
        buf[4] = 9;
        write_bytes(path, buf);
        CHECK_THROWS_AS(load_embeddings(path.string()), VersionUnsupported);
    }
    SUBCASE("payload truncated mid-token") {
        std::string buf = small_valid_buffer();
        buf.resize(buf.size() - 6);
        write_bytes(path, buf);
        CHECK_THROWS_AS(load_embeddings(path.string()), TruncatedPayload);
    }
    SUBCASE("bytes past the declared payload") {
        std::string buf = small_valid_buffer();
        buf += "xyz";
        write_bytes(path, buf);
        CHECK_THROWS_AS(load_embeddings(path.string()), TrailingBytes);
    }
    SUBCASE("mask byte outside 0/1") {
        std::string buf = "ALNF";
        put_u32(buf, 1);
        put_u32(buf, 1);
        put_u32(buf, 2);
        put_u32(buf, 1);
        put_u32(buf, 3);  // has_global | has_mask
        for (float v : {1.0f, -1.0f, 1.0f}) put_f32(buf, v);
        buf.push_back(1);
        buf.push_back(2);
        write_bytes(path, buf);
        CHECK_THROWS_AS(load_embeddings(path.string()), InvalidMask);
    }
    SUBCASE("fully masked item") {
        std::string buf = "ALNF";
        put_u32(buf, 1);
        put_u32(buf, 1);
        put_u32(buf, 2);
        put_u32(buf, 1);
        put_u32(buf, 3);
        for (float v : {1.0f, -1.0f, 1.0f}) put_f32(buf, v);
        buf.push_back(0);
        buf.push_back(0);
        write_bytes(path, buf);
        CHECK_THROWS_AS(load_embeddings(path.string()), InvalidMask);
    }
    SUBCASE("zero token count") {
        std::string buf = "ALNF";
        put_u32(buf, 1);
        put_u32(buf, 1);
        put_u32(buf, 0);
        put_u32(buf, 2);
        put_u32(buf, 1);
        write_bytes(path, buf);
        CHECK_THROWS_AS(load_embeddings(path.string()), FileError);
    }
    SUBCASE("unknown flag bits") {
        std::string buf = small_valid_buffer();
        buf[20] = 5;  // flags word of the first item header
        write_bytes(path, buf);
        CHECK_THROWS_AS(load_embeddings(path.string()), FileError);
    }
    SUBCASE("non-finite token payload") {
        std::string buf = "ALNF";
        put_u32(buf, 1);
        put_u32(buf, 1);
        put_u32(buf, 1);
        put_u32(buf, 2);
        put_u32(buf, 1);
        put_u32(buf, 0x7fc00000u);  // quiet NaN token entry
        put_f32(buf, 1.0f);
        put_f32(buf, 1.0f);
        put_f32(buf, 0.0f);
        write_bytes(path, buf);
        CHECK_THROWS_AS(load_embeddings(path.string()), FileError);
    }

    fs::remove(path);
}

TEST_CASE("alignment dump reconciles with the pair score") {
    Rng rng(808);
    Mat<double> mt(3, 8), ot(4, 8);
    for (Index i = 0; i < mt.size(); ++i) mt.data()[i] = rng.gaussian();
    for (Index i = 0; i < ot.size(); ++i) ot.data()[i] = rng.gaussian();
    for (Index i = 0; i < mt.rows(); ++i) mt.row(i) /= mt.row(i).norm();
    for (Index i = 0; i < ot.rows(); ++i) ot.row(i) /= ot.row(i).norm();
    const TokenSetd mu =
        l2_normalize(TokenSetd::dense(mt, Vec<double>(mt.colwise().mean().transpose())));
    const TokenSetd om =
        l2_normalize(TokenSetd::dense(ot, Vec<double>(ot.colwise().mean().transpose())));

    StrategyConfig cfg = StrategyConfig::for_kind(Strategy::TokenFlow);
    std::ostringstream sink;
    const AlignmentDump dump = dump_alignment(mu, om, cfg, sink, 5);

    // Rescaled flows aggregate back to the fine similarities after undoing
    // the factor of 100.
    CHECK(dump.contrib_v.sum() / 100.0 ==
          doctest::Approx(*dump.score.s_fine_v).epsilon(1e-12).scale(1));
    CHECK(dump.contrib_t.sum() / 100.0 ==
          doctest::Approx(*dump.score.s_fine_t).epsilon(1e-12).scale(1));
    CHECK((dump.contrib_v - dump.t_hat_v.cwiseProduct(dump.c)).norm() == 0.0);

    // Tokenflow mass: each visual row of T carries d_s / l1.
    for (Index s = 0; s < dump.c.rows(); ++s)
        CHECK(dump.t_hat_v.row(s).sum() / 100.0 ==
              doctest::Approx(dump.d[s] / double(dump.c.rows())).epsilon(1e-12).scale(1));

    // Top contributions are sorted and start at the matrix maximum.
    REQUIRE(dump.top_v.size() == 5);
    CHECK(dump.top_v.front().value == dump.contrib_v.maxCoeff());
    for (std::size_t k = 1; k < dump.top_v.size(); ++k)
        CHECK(dump.top_v[k - 1].value >= dump.top_v[k].value);
    for (const auto& c : dump.top_v)
        CHECK(c.value == dump.contrib_v(c.s, c.t));

    // The sink holds one JSON document that mirrors the dump.
    const nlohmann::json j = nlohmann::json::parse(sink.str());
    CHECK(j["strategy"] == "tokenflow");
    CHECK(j["l1"] == 3);
    CHECK(j["l2"] == 4);
    CHECK(j["c"].size() == 3);
    CHECK(j["c"][0].size() == 4);
    CHECK(double(j["scores"]["s_v"]) == doctest::Approx(dump.score.s_v).epsilon(1e-12));
    CHECK(double(j["t_hat_v2t"][1][2]) == doctest::Approx(dump.t_hat_v(1, 2)).epsilon(1e-12));
    CHECK(j["top_v2t"].size() == 5);
    CHECK(double(j["top_v2t"][0]["value"]) ==
          doctest::Approx(dump.top_v.front().value).epsilon(1e-12));
}

TEST_CASE("single token pair dump is the rescaled token weight") {
    // With one text token the tokenflow softmax is trivial, so
    // T = [[d_0 / l1]] and the rescaled entry is 100 * d_0 (l1 = 1).
    Vec<double> a(3), b(3);
    a << 1.0, 0.0, 0.0;
    b << 0.8, 0.6, 0.0;
    const TokenSetd mu = TokenSetd::dense(Mat<double>(a.transpose()), a);
    const TokenSetd om = TokenSetd::dense(Mat<double>(b.transpose()), b);
    StrategyConfig cfg = StrategyConfig::for_kind(Strategy::TokenFlow);
    cfg.global_blend_w = 0.0;

    std::ostringstream sink;
    const AlignmentDump dump = dump_alignment(mu, om, cfg, sink, 3);
    REQUIRE(dump.t_hat_v.rows() == 1);
    REQUIRE(dump.t_hat_v.cols() == 1);
    CHECK(dump.t_hat_v(0, 0) == doctest::Approx(100.0 * dump.d[0]).epsilon(1e-12));
    CHECK(dump.top_v.size() == 1);  // only one cell exists
    CHECK(dump.score.s_v == doctest::Approx(dump.d[0] * dump.c(0, 0)).epsilon(1e-12));

    CHECK_THROWS_AS(dump_alignment(mu, om, cfg, sink, 0), InvalidParameter);
}

}  // TEST_SUITE
