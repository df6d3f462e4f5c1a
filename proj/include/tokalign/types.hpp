// Dense value types shared by every token-alignment kernel.
//
// All matrices are Eigen dense types templated on the scalar; double is the
// working precision everywhere in this library (storage formats may narrow).

#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tokalign {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using MaskVec = Eigen::Array<bool, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ZeroVector : Error { using Error::Error; };
struct DimMismatch : Error { using Error::Error; };
struct EmptySequence : Error { using Error::Error; };
struct CropTooSmall : Error { using Error::Error; };
struct InvalidParameter : Error { using Error::Error; };
struct NonBalancedMarginals : Error { using Error::Error; };
struct TooLarge : Error { using Error::Error; };
struct NonStochasticTargets : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct AlphaOutOfRange : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };
struct SpecInfeasible : Error { using Error::Error; };
struct DivergedLoss : Error { using Error::Error; };

// File-level failures; the CLI maps these to exit code 2.
struct FileError : Error { using Error::Error; };
struct BadMagic : FileError { using FileError::FileError; };
struct TruncatedPayload : FileError { using FileError::FileError; };
struct TrailingBytes : FileError { using FileError::FileError; };
struct VersionUnsupported : FileError { using FileError::FileError; };
struct InvalidMask : FileError { using FileError::FileError; };

// ---------------------------------------------------------------------------
// Tags

enum class Direction { VisualToText, TextToVisual };

enum class Strategy { Uniform, Learnable, Scan, MaxAvg, MaxSum, Emd, TokenFlow };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::Uniform: return "uniform";
        case Strategy::Learnable: return "learnable";
        case Strategy::Scan: return "scan";
        case Strategy::MaxAvg: return "max-avg";
        case Strategy::MaxSum: return "max-sum";
        case Strategy::Emd: return "emd";
        case Strategy::TokenFlow: return "tokenflow";
    }
    return "?";
}

inline Strategy strategy_from_string(std::string_view name) {
    if (name == "uniform") return Strategy::Uniform;
    if (name == "learnable") return Strategy::Learnable;
    if (name == "scan") return Strategy::Scan;
    if (name == "max-avg") return Strategy::MaxAvg;
    if (name == "max-sum") return Strategy::MaxSum;
    if (name == "emd") return Strategy::Emd;
    if (name == "tokenflow") return Strategy::TokenFlow;
    throw InvalidParameter("unknown strategy name: " + std::string(name));
}

// ---------------------------------------------------------------------------
// Token containers

// One modality instance: L token embeddings of dimension d, a global summary
// vector, and a validity mask over the rows. Masked-out rows are never read
// by any kernel; l (the unmasked count) is what enters every formula.
template <class Scalar>
struct TokenSet {
    Mat<Scalar> tokens;  // L x d
    Vec<Scalar> global;  // d
    MaskVec mask;        // L, true = real token

    Index capacity() const { return tokens.rows(); }
    Index dim() const { return tokens.cols(); }
    Index count() const { return mask.template cast<Index>().sum(); }

    static TokenSet dense(Mat<Scalar> toks, Vec<Scalar> glob) {
        TokenSet ts;
        ts.mask = MaskVec::Constant(toks.rows(), true);
        ts.tokens = std::move(toks);
        ts.global = std::move(glob);
        return ts;
    }
};

// Token-pair cosine similarities c, shape l1 x l2 (unmasked counts only).
template <class Scalar>
struct SimilarityMatrix {
    Mat<Scalar> c;

    Index l1() const { return c.rows(); }
    Index l2() const { return c.cols(); }
};

// Per-pair contribution plan T. Entries are nonnegative for every strategy
// except tokenflow, where the sign of a row (column) follows the sign of the
// generating token weight d_s (e_t).
template <class Scalar>
struct MatchingFlow {
    Mat<Scalar> t;
    Direction direction = Direction::VisualToText;
    Strategy strategy = Strategy::Uniform;
};

// The two directional similarities of one pair plus the blend components.
template <class Scalar>
struct PairScore {
    Scalar s_v = 0;
    Scalar s_t = 0;
    std::optional<Scalar> s_global;
    std::optional<Scalar> s_fine_v;
    std::optional<Scalar> s_fine_t;
};

// Token weights against the other modality's global: d_s = mu_s . omega_bar,
// e_t = mu_bar . omega_t. Cosines of unit vectors, so in [-1, 1].
template <class Scalar>
struct TokenWeights {
    Vec<Scalar> d;  // size l1
    Vec<Scalar> e;  // size l2
};

using TokenSetd = TokenSet<double>;
using SimilarityMatrixd = SimilarityMatrix<double>;
using MatchingFlowd = MatchingFlow<double>;
using PairScored = PairScore<double>;
using TokenWeightsd = TokenWeights<double>;

}  // namespace tokalign
