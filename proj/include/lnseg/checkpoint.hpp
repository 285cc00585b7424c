// Copyright 2026 The lnseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>

#include "lnseg/ednet.hpp"

namespace lnseg::nn {

/// Binary weight file: magic "LNSGCKP1", the model spec, then every
/// parameter and buffer by name as little-endian float32, closed by an
/// FNV-1a checksum of all preceding bytes.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, EncoderDecoder<Scalar>& model, int epoch);

/// Loads weights into a model built from a matching spec. Throws
/// MissingCheckpoint if the file is absent, MalformedFile on a corrupt file
/// or a spec/name/size mismatch. Returns the stored epoch.
template <typename Scalar>
int load_checkpoint(const std::filesystem::path& path, EncoderDecoder<Scalar>& model);

}  // namespace lnseg::nn
