#include "wordprobe/error.hpp"

namespace wordprobe {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::empty_line: return "EmptyLine";
    case Errc::invalid_char: return "InvalidChar";
    case Errc::empty_corpus: return "EmptyCorpus";
    case Errc::id_out_of_range: return "IdOutOfRange";
    case Errc::sequence_too_long: return "SequenceTooLong";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::no_masked_positions: return "NoMaskedPositions";
    case Errc::config_mismatch: return "ConfigMismatch";
    case Errc::empty_table: return "EmptyTable";
    case Errc::index_out_of_range: return "IndexOutOfRange";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::label_out_of_range: return "LabelOutOfRange";
    case Errc::io_error: return "IoError";
    case Errc::corrupt_archive: return "CorruptArchive";
    case Errc::normalization_violation: return "NormalizationViolation";
    case Errc::invalid_argument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace wordprobe
