package main

import (
	"fmt"

	"example.com/bravo/pkg"
)

func main() {
	doubled := mathy.Double(21)
	scaled := mathy.Scale(doubled, 3)
	for i := 0; i < 3; i++ {
		fmt.Println(doubled, scaled, i)
	}
	total := doubled + scaled + 7
	fmt.Println("total is", total)
}
