# dc-certify app package
