#include "windsr/error.h"

namespace windsr {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kIngestion: return "ingestion";
    case ErrorKind::kRange: return "range";
    case ErrorKind::kSize: return "size";
    case ErrorKind::kDegenerateRange: return "degenerate_range";
    case ErrorKind::kDecode: return "decode";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kPlan: return "plan";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace windsr
