#  Copyright (c) 2025 Markus Ressel
#  .
#  Permission is hereby granted, free of charge, to any person obtaining a copy
#  of this software and associated documentation files (the "Software"), to deal
#  in the Software without restriction, including without limitation the rights
#  to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
#  copies of the Software, and to permit persons to whom the Software is
#  furnished to do so, subject to the following conditions:
#  .
#  The above copyright notice and this permission notice shall be included in all
#  copies or substantial portions of the Software.
#  .
#  THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
#  IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
#  FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
#  AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
#  LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
#  OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
#  SOFTWARE.

LONG_ARG_KEY_PREFIXES = ["--"]
ABBREVIATED_ARG_KEY_PREFIXES = ['-']
ARG_NAMING_PREFIXES = LONG_ARG_KEY_PREFIXES + ABBREVIATED_ARG_KEY_PREFIXES

ARG_VALUE_SEPARATOR_CHAR = "="
CONFIG_COMMENT_CHAR = "#"
LIST_SEPARATOR_CHAR = ","
MIX_FIELD_SEPARATOR_CHAR = ":"

QUOTE_CHARS = ['"', '\'']

PROGRAM_NAME = "splitsim"

KEY_NAMES = "names"
KEY_DESCRIPTION = "description"
KEY_ARGUMENTS = "arguments"
KEY_HELP_MESSAGE = "help_message"
KEY_HIDDEN = "hidden"
KEY_NUMBER = "number"
KEY_TITLE = "title"
KEY_FUNCTION = "function"

CACHELINE_BYTES = 64
WORD_BYTES = 8
PAGE_BYTES = 4096
PAGES_PER_BATCH = 64

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG_ERROR = 2
EXIT_INVARIANT_VIOLATION = 3

METRICS_FILE_NAME = "metrics.csv"
MANIFEST_FILE_NAME = "manifest.json"
TRACE_FILE_NAME = "trace.log"
