package main

import (
	"fmt"

	"example.com/foxtrot/util"
)

func main() {
	banner := util.Repeat("=", 8)
	loud := util.Shout("ready")
	fmt.Println(banner, loud, banner)
	width := len(banner) + len(loud) + 2
	fmt.Println("width is", width)
}
