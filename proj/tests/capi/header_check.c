/* Copyright 2026 The finetap Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/* Builds and links the public header as plain C. */

#include <finetap/finetap.h>
#include <stdio.h>
#include <string.h>

int main(void) {
  float v = 0.0f;
  uint32_t s = 0, e = 0, f = 0;
  if (finetap_decompose(0.018f, "f32", &s, &e, &f) != FINETAP_OK || e != 121) return 1;
  if (finetap_compose("f32", s, e, f, &v) != FINETAP_OK || v != 0.018f) return 1;
  if (finetap_compose("f64", 0, 0, 0, &v) != FINETAP_E_UNSUPPORTED_FORMAT) return 1;
  if (strlen(finetap_last_error()) == 0) return 1;
  printf("finetap %s\n", finetap_version());
  return 0;
}
