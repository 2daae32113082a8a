#pragma once

#include <stdexcept>
#include <string>

namespace msfpca {

// Base class for all library errors. Each concrete type carries a stable
// kind() tag so the CLI can emit machine-parsable one-line errors.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define MSFPCA_DEFINE_ERROR(NAME)                                        \
    class NAME : public Error {                                          \
    public:                                                              \
        explicit NAME(const std::string& msg) : Error(#NAME, msg) {}     \
    }

MSFPCA_DEFINE_ERROR(EmptyInput);
MSFPCA_DEFINE_ERROR(DuplicateObservation);
MSFPCA_DEFINE_ERROR(NonFiniteValue);
MSFPCA_DEFINE_ERROR(ZeroVariance);
MSFPCA_DEFINE_ERROR(DegenerateTimeRange);
MSFPCA_DEFINE_ERROR(TimeOutOfRange);
MSFPCA_DEFINE_ERROR(RankDeficientBasis);
MSFPCA_DEFINE_ERROR(RankDeficientLoadings);
MSFPCA_DEFINE_ERROR(DimensionMismatch);
MSFPCA_DEFINE_ERROR(InsufficientChains);
MSFPCA_DEFINE_ERROR(NonFiniteDensity);
MSFPCA_DEFINE_ERROR(SingularSubmatrix);
MSFPCA_DEFINE_ERROR(NegativeMI);
MSFPCA_DEFINE_ERROR(InsufficientTail);
MSFPCA_DEFINE_ERROR(TooFewDraws);
MSFPCA_DEFINE_ERROR(InvalidArgument);
MSFPCA_DEFINE_ERROR(ConfigParse);
MSFPCA_DEFINE_ERROR(FileNotFound);
MSFPCA_DEFINE_ERROR(SpecMismatch);
MSFPCA_DEFINE_ERROR(IoError);

#undef MSFPCA_DEFINE_ERROR

}  // namespace msfpca
