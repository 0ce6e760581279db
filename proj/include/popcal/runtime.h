// Copyright 2026 The popcal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef POPCAL_RUNTIME_H_
#define POPCAL_RUNTIME_H_

namespace popcal {

// Keeps large freed blocks in the heap instead of returning them to the OS.
// Autodiff graphs allocate and free many multi-megabyte buffers per step;
// with glibc defaults each one is a fresh mmap and page-fault storm. No-op on
// other allocators.
void tune_allocator();

}  // namespace popcal

#endif  // POPCAL_RUNTIME_H_
