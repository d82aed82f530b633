#pragma once

#include "meshgs/pipeline.hpp"

#include <filesystem>
#include <string>

namespace meshgs {

/// Pipeline checkpoint: magic "MGSC", u32 format version, then tagged
/// sections (u32 tag, u64 byte length, payload). Tags: SDFG grid, APPR
/// appearance field, BGGS background Gaussians, RFGS refined Gaussians with
/// their mesh, META config and stage counters (JSON), OPTM optimizer moments.
/// Readers skip unknown tags. The encoding is a pure function of the state.
std::string checkpoint_bytes(const PipelineState& state);
PipelineState checkpoint_from_bytes(const std::string& bytes);

/// Atomic write (temporary file + rename).
void save_checkpoint(const std::filesystem::path& path, const PipelineState& state);
PipelineState load_checkpoint(const std::filesystem::path& path);

} // namespace meshgs
