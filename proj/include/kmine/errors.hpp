#pragma once

#include <stdexcept>
#include <string>

namespace kmine {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// corpus
struct MalformedLine : Error {
  MalformedLine(int line_no, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": " + what), line_no(line_no) {}
  int line_no;
};
struct GoldOutOfRange : Error {
  GoldOutOfRange(int line_no, int gold, int m)
      : Error("line " + std::to_string(line_no) + ": gold_index " + std::to_string(gold) +
              " out of range [0, " + std::to_string(m) + ")"),
        line_no(line_no) {}
  int line_no;
};
struct BadFractions : Error {
  using Error::Error;
};
struct SpecInfeasible : Error {
  using Error::Error;
};

// encoding
struct EmptyPool : Error {
  using Error::Error;
};

// core / fusion / objectives
struct ShapeMismatch : Error {
  using Error::Error;
};
struct EmptySpan : Error {
  using Error::Error;
};
struct NoTargetTokens : Error {
  using Error::Error;
};
struct GoldMissing : Error {
  using Error::Error;
};
struct LambdaPositiveButNoGold : Error {
  using Error::Error;
};
struct NonFiniteLoss : Error {
  using Error::Error;
};

// metrics / harness
struct NoTokens : Error {
  using Error::Error;
};
struct SingleOption : Error {
  using Error::Error;
};
struct VocabMismatch : Error {
  using Error::Error;
};
struct EmptyEvaluation : Error {
  using Error::Error;
};
struct EmptyTrace : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace kmine
